use std::io::BufWriter;
use std::path::Path;

use crate::cloud::snapshot::{NamedArray, Snapshot};
use crate::error::{Error, Result};

/// Row-major float raster, 3 (RGB) or 4 (RGBA) channels, nominally [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 3 || channels == 4, "images have 3 or 4 channels");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 3 && channels != 4 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image data must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// RGB view, dropping an alpha channel if present.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// 8-bit quantization: `floor(clamp(v, 0, 1) · 255 + ½)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 4 {
                png::ColorType::Rgba
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc
                .write_header()
                .map_err(|e| Error::parse("png encoder", e))?;
            w.write_image_data(&self.to_u8())
                .map_err(|e| Error::parse("png encoder", e))?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io(path, e))
    }

    /// Decodes an 8-bit PNG to [0, 1] by `/255`. Gray and palette images are expanded to RGB(A).
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND);
        let mut reader = dec.read_info().map_err(|e| Error::parse("png", e))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::parse("png", e))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::parse("png", "only 8-bit images are supported"));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let raw = &buf[..info.buffer_size()];
        let (channels, data): (usize, Vec<f64>) = match info.color_type {
            png::ColorType::Rgb => (3, raw.iter().map(|&v| v as f64 / 255.0).collect()),
            png::ColorType::Rgba => (4, raw.iter().map(|&v| v as f64 / 255.0).collect()),
            png::ColorType::Grayscale => (
                3,
                raw.iter().flat_map(|&v| [v as f64 / 255.0; 3]).collect(),
            ),
            png::ColorType::GrayscaleAlpha => (
                4,
                raw.chunks_exact(2)
                    .flat_map(|p| {
                        let g = p[0] as f64 / 255.0;
                        [g, g, g, p[1] as f64 / 255.0]
                    })
                    .collect(),
            ),
            png::ColorType::Indexed => return Err(Error::parse("png", "unexpanded palette")),
        };
        Self::from_data(w, h, channels, data)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Float dump in the snapshot container (single `image` array, shape `[h, w, c]`).
    pub fn to_raw_snapshot(&self) -> Snapshot {
        Snapshot {
            frame: 0,
            grid_resolution: 0,
            arrays: vec![NamedArray {
                name: "image".into(),
                shape: vec![self.height, self.width, self.channels],
                data: self.data.iter().map(|&v| v as f32).collect(),
            }],
        }
    }

    pub fn from_raw_snapshot(snap: &Snapshot) -> Result<Self> {
        let a = snap.array("image").ok_or_else(|| Error::SnapshotMismatch {
            array: "image".into(),
            message: "missing".into(),
        })?;
        let [h, w, c] = a.shape[..] else {
            return Err(Error::SnapshotMismatch {
                array: "image".into(),
                message: format!("shape {:?} is not [h, w, c]", a.shape),
            });
        };
        Self::from_data(w, h, c, a.data.iter().map(|&v| v as f64).collect())
    }
}

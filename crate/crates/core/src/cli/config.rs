//! On-disk scene description and camera records. Relative paths resolve
//! against the directory of the file that names them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitConfig, FrameTargets};
use crate::math::{Camera, Mat3, RigidTransform, Vec3};
use crate::mesh::{build_uv_sample_table, parse_obj, read_obj, TemplateMesh, UvSampleTable};
use crate::render::ImageBuffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// One PNG per camera, in camera order.
    pub targets: Vec<PathBuf>,
    /// `v_s`: OBJ or JSON `[[x, y, z], ...]`; enables the geometric term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_vertices: Option<PathBuf>,
    /// `M_r`: JSON `[[x, y, z], ...]`, one per landmark; enables the landmark term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub template: PathBuf,
    #[serde(default)]
    pub landmarks: Vec<usize>,
    pub cameras: Vec<PathBuf>,
    #[serde(default)]
    pub frames: Vec<FrameConfig>,
    pub uv_resolution: usize,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_snapshot: Option<PathBuf>,
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SceneConfig = serde_json::from_str(text).map_err(|e| Error::parse("scene config", e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.uv_resolution < 2 {
            return Err(Error::invalid("uv_resolution must be at least 2"));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.targets.len() != self.cameras.len() {
                return Err(Error::invalid(format!(
                    "frame {t} lists {} targets for {} cameras",
                    f.targets.len(),
                    self.cameras.len()
                )));
            }
        }
        self.fit.validate()
    }
}

/// A parsed config together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub base: PathBuf,
}

impl Scene {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = SceneConfig::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn template(&self) -> Result<TemplateMesh> {
        read_obj(&self.resolve(&self.config.template))?.with_landmarks(self.config.landmarks.clone())
    }

    pub fn table(&self, template: &TemplateMesh) -> Result<UvSampleTable> {
        build_uv_sample_table(template, self.config.uv_resolution)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let mut out = Vec::new();
        for p in &self.config.cameras {
            let cams = read_cameras(&self.resolve(p))?;
            if cams.len() != 1 {
                return Err(Error::invalid(format!(
                    "{} holds {} cameras; scene cameras take one each",
                    p.display(),
                    cams.len()
                )));
            }
            out.extend(cams);
        }
        Ok(out)
    }

    /// Loads every frame's supervision against `cameras`. Targets keep an
    /// alpha channel only when `channels` is 4.
    pub fn frames(&self, cameras: &[Camera], channels: usize) -> Result<Vec<FrameTargets>> {
        self.config
            .frames
            .iter()
            .map(|f| {
                let images = f
                    .targets
                    .iter()
                    .zip(cameras)
                    .map(|(p, c)| {
                        let path = self.resolve(p);
                        let mut img = ImageBuffer::read_png(&path)?;
                        if channels == 3 {
                            img = img.to_rgb();
                        }
                        if img.width != c.width || img.height != c.height {
                            return Err(Error::invalid(format!(
                                "{} is {}x{}, its camera is {}x{}",
                                path.display(),
                                img.width,
                                img.height,
                                c.width,
                                c.height
                            )));
                        }
                        Ok(img)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(FrameTargets {
                    cameras: cameras.to_vec(),
                    images,
                    tracked_vertices: f.tracked_vertices.as_ref().map(|p| read_points(&self.resolve(p))).transpose()?,
                    reference_landmarks: f
                        .reference_landmarks
                        .as_ref()
                        .map(|p| read_points(&self.resolve(p)))
                        .transpose()?,
                })
            })
            .collect()
    }
}

/// Vertex positions from an OBJ file or a JSON array of triples.
pub fn read_points(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
        return parse_obj(&text)
            .map(|m| m.vertices)
            .map_err(|e| Error::parse(path.display().to_string(), e));
    }
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// Pinhole camera record; `world_to_camera` is a row-major 4×4 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [[f64; 4]; 4],
}

impl CameraRecord {
    pub fn from_camera(c: &Camera) -> Self {
        let r = &c.world_to_camera.rotation.0;
        let t = c.world_to_camera.translation;
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        Self {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_camera: m,
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let m = &self.world_to_camera;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("world_to_camera last row must be [0, 0, 0, 1]"));
        }
        let rotation = Mat3([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]);
        Camera::new(
            self.width,
            self.height,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            RigidTransform {
                rotation,
                translation: [m[0][3], m[1][3], m[2][3]],
            },
        )
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraFile {
    One(CameraRecord),
    Many(Vec<CameraRecord>),
}

/// A camera file holds one record or an array of them.
pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: CameraFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let records = match parsed {
        CameraFile::One(r) => vec![r],
        CameraFile::Many(v) => v,
    };
    if records.is_empty() {
        return Err(Error::invalid(format!("{} holds no cameras", path.display())));
    }
    records
        .iter()
        .map(|r| r.to_camera())
        .collect::<Result<_>>()
        .map_err(|e| Error::parse(path.display().to_string(), e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SceneConfig {
        SceneConfig {
            template: "head.obj".into(),
            landmarks: vec![1, 2, 3, 4],
            cameras: vec!["cam0.json".into(), "cam1.json".into()],
            frames: vec![FrameConfig {
                targets: vec!["a.png".into(), "b.png".into()],
                tracked_vertices: Some("v.json".into()),
                reference_landmarks: None,
            }],
            uv_resolution: 32,
            fit: FitConfig {
                iterations: 12,
                seed: 9,
                ..FitConfig::default()
            },
            initial_snapshot: None,
        }
    }

    #[test]
    fn config_round_trips() {
        let c = sample();
        let back = SceneConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(SceneConfig::from_json(&back.to_json()).unwrap(), back);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = sample();
        c.uv_resolution = 1;
        assert!(SceneConfig::from_json(&c.to_json()).is_err());
        let mut c = sample();
        c.frames[0].targets.pop();
        assert!(SceneConfig::from_json(&c.to_json()).is_err());
        assert!(SceneConfig::from_json(r#"{"template":"a.obj","cameras":[],"uv_resolution":4,"bogus":1}"#).is_err());
    }

    #[test]
    fn camera_record_round_trip() {
        let cam = Camera::look_at(64, 48, 50.0, [0.1, 0.2, 0.5], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let rec = CameraRecord::from_camera(&cam);
        let json = serde_json::to_string(&rec).unwrap();
        let back: CameraRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_camera().unwrap(), cam);
        let mut bad = rec.clone();
        bad.world_to_camera[3][0] = 1.0;
        assert!(bad.to_camera().is_err());
    }
}

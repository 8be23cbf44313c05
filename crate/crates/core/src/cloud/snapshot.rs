//! Parameter snapshot container.
//!
//! Layout: the 8-byte magic `SPLATSNP`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then one contiguous block of little-endian `f32`
//! values per array in header order.
//!
//! ```json
//! {"format":"splat-avatar-snapshot","version":1,"dtype":"f32le",
//!  "frame":0,"grid_resolution":32,
//!  "arrays":[{"name":"opacity","shape":[950,1],"offset":0}, ...]}
//! ```
//!
//! `offset` is in bytes from the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AvatarParams;
use crate::error::{Error, Result};
use crate::math::Quaternion;
use crate::mesh::RigidPose;

pub const MAGIC: &[u8; 8] = b"SPLATSNP";
const FORMAT: &str = "splat-avatar-snapshot";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "array `{name}` has {} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    fn from_f64(name: &str, shape: Vec<usize>, data: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub frame: usize,
    pub grid_resolution: usize,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    frame: usize,
    grid_resolution: usize,
    arrays: Vec<ArrayEntry>,
}

impl Snapshot {
    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let arrays = self
            .arrays
            .iter()
            .map(|a| {
                let e = ArrayEntry {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    offset,
                };
                offset += 4 * a.data.len() as u64;
                e
            })
            .collect();
        let header = Header {
            format: FORMAT.into(),
            version: 1,
            dtype: DTYPE.into(),
            frame: self.frame,
            grid_resolution: self.grid_resolution,
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::parse("snapshot", m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::parse("snapshot header", e))?;
        if header.format != FORMAT || header.dtype != DTYPE {
            return Err(bad("unsupported format or dtype"));
        }
        let payload = &bytes[16 + hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = payload
                .get(start..start + 4 * count)
                .ok_or_else(|| bad(&format!("array `{}` runs past the payload", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            frame: header.frame,
            grid_resolution: header.grid_resolution,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Packs parameters and the cached initial scales.
pub fn params_to_snapshot(
    params: &AvatarParams,
    init_scales: &[f64],
    frame: usize,
    grid_resolution: usize,
) -> Snapshot {
    let nv = params.vertex_offsets.len();
    let ng = params.gaussian_count();
    let arrays = vec![
        NamedArray::from_f64("vertex_offsets", vec![nv, 3], params.vertex_offsets.as_flattened()),
        NamedArray::from_f64("pose_rotation", vec![4], &params.pose.rotation.to_array()),
        NamedArray::from_f64("pose_translation", vec![3], &params.pose.translation),
        NamedArray::from_f64("delta_position", vec![ng, 3], params.delta_position.as_flattened()),
        NamedArray::from_f64("delta_rotation", vec![ng, 4], params.delta_rotation.as_flattened()),
        NamedArray::from_f64("delta_scale", vec![ng, 3], params.delta_scale.as_flattened()),
        NamedArray::from_f64("opacity", vec![ng, 1], &params.opacity),
        NamedArray::from_f64("color", vec![ng, 3], params.color.as_flattened()),
        NamedArray::from_f64("init_scale", vec![ng], init_scales),
    ];
    Snapshot {
        frame,
        grid_resolution,
        arrays,
    }
}

/// Unpacks parameters, validating every array against the expected topology.
pub fn snapshot_to_params(
    snap: &Snapshot,
    vertices: usize,
    gaussians: usize,
) -> Result<(AvatarParams, Vec<f64>)> {
    fn get(snap: &Snapshot, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let a = snap.array(name).ok_or_else(|| Error::SnapshotMismatch {
            array: name.into(),
            message: "missing".into(),
        })?;
        if a.shape != shape {
            return Err(Error::SnapshotMismatch {
                array: name.into(),
                message: format!("shape {:?}, expected {shape:?}", a.shape),
            });
        }
        Ok(a.data.iter().map(|&v| v as f64).collect())
    }
    fn rows<const N: usize>(v: Vec<f64>) -> Vec<[f64; N]> {
        v.chunks_exact(N).map(|c| c.try_into().unwrap()).collect()
    }
    let rot = get(snap, "pose_rotation", &[4])?;
    let tr = get(snap, "pose_translation", &[3])?;
    let params = AvatarParams {
        vertex_offsets: rows(get(snap, "vertex_offsets", &[vertices, 3])?),
        pose: RigidPose {
            rotation: Quaternion::new(rot[0], rot[1], rot[2], rot[3]),
            translation: [tr[0], tr[1], tr[2]],
        },
        delta_position: rows(get(snap, "delta_position", &[gaussians, 3])?),
        delta_rotation: rows(get(snap, "delta_rotation", &[gaussians, 4])?),
        delta_scale: rows(get(snap, "delta_scale", &[gaussians, 3])?),
        opacity: get(snap, "opacity", &[gaussians, 1])?,
        color: rows(get(snap, "color", &[gaussians, 3])?),
    };
    let init_scales = get(snap, "init_scale", &[gaussians])?;
    Ok((params, init_scales))
}

//! Template mesh, coarse deformation (per-vertex offsets, rigid pose) and the
//! UV sample table that anchors one gaussian per valid texel.

mod obj;
pub mod procedural;
mod uv;

pub use obj::{parse_obj, read_obj, write_obj};
pub use uv::{barycentric, build_uv_sample_table, sample_positions, Texel, UvSampleTable};

use crate::error::{Error, Result};
use crate::math::{add3, quat_to_rotation, scale3, Mat3, Quaternion, Vec3};

/// Rest-pose topology with per-face-corner UVs.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// One UV triple per face; empty when the mesh carries no texture coordinates.
    pub face_uvs: Vec<[[f64; 2]; 3]>,
    pub landmarks: Vec<usize>,
}

impl TemplateMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        face_uvs: Vec<[[f64; 2]; 3]>,
        landmarks: Vec<usize>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(Error::invalid(format!(
                "face {f:?} references a vertex beyond {nv}"
            )));
        }
        if !face_uvs.is_empty() && face_uvs.len() != faces.len() {
            return Err(Error::invalid(format!(
                "{} face UV triples for {} faces",
                face_uvs.len(),
                faces.len()
            )));
        }
        let uv_ok = |v: f64| (0.0..=1.0).contains(&v);
        if face_uvs
            .iter()
            .flatten()
            .any(|uv| !uv_ok(uv[0]) || !uv_ok(uv[1]))
        {
            return Err(Error::invalid("texture coordinates must lie in [0, 1]"));
        }
        let mesh = Self {
            vertices,
            faces,
            face_uvs,
            landmarks: Vec::new(),
        };
        mesh.with_landmarks(landmarks)
    }

    pub fn with_landmarks(mut self, landmarks: Vec<usize>) -> Result<Self> {
        if let Some(&i) = landmarks.iter().find(|&&i| i >= self.vertices.len()) {
            return Err(Error::invalid(format!(
                "landmark index {i} out of range for {} vertices",
                self.vertices.len()
            )));
        }
        self.landmarks = landmarks;
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn has_uvs(&self) -> bool {
        !self.face_uvs.is_empty()
    }
}

/// Global head pose, applied about the world origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl RigidPose {
    pub const IDENTITY: RigidPose = RigidPose {
        rotation: Quaternion::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn rotation_matrix(&self) -> Result<Mat3> {
        quat_to_rotation(self.rotation)
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Vertex positions sharing the template's topology.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedMesh {
    pub vertices: Vec<Vec3>,
}

/// `v_d = v_t + δv`.
pub fn apply_vertex_offsets(template: &TemplateMesh, offsets: &[Vec3]) -> Result<DeformedMesh> {
    if offsets.len() != template.vertex_count() {
        return Err(Error::invalid(format!(
            "{} vertex offsets for {} vertices",
            offsets.len(),
            template.vertex_count()
        )));
    }
    let vertices = template
        .vertices
        .iter()
        .zip(offsets)
        .map(|(&v, &d)| add3(v, d))
        .collect();
    Ok(DeformedMesh { vertices })
}

/// `v_p = R·v_d + T`.
pub fn apply_rigid_pose(mesh: &DeformedMesh, pose: &RigidPose) -> Result<DeformedMesh> {
    let r = pose.rotation_matrix()?;
    let vertices = mesh
        .vertices
        .iter()
        .map(|&v| add3(r.mul_vec(v), pose.translation))
        .collect();
    Ok(DeformedMesh { vertices })
}

/// Posed positions of the template's rigid landmarks.
pub fn landmark_positions(mesh: &DeformedMesh, template: &TemplateMesh) -> Result<Vec<Vec3>> {
    template
        .landmarks
        .iter()
        .map(|&i| {
            mesh.vertices.get(i).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "landmark index {i} out of range for {} vertices",
                    mesh.vertices.len()
                ))
            })
        })
        .collect()
}

/// Object-centric view direction: mean posed vertex minus the camera center.
pub fn view_direction(mesh: &DeformedMesh, camera_center: Vec3) -> Vec3 {
    let n = mesh.vertices.len().max(1) as f64;
    let sum = mesh.vertices.iter().fold([0.0; 3], |acc, &v| add3(acc, v));
    let mean = scale3(sum, 1.0 / n);
    crate::math::sub3(mean, camera_center)
}

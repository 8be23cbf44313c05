//! Front-to-back alpha compositing of projected gaussians.
//!
//! Two forward paths share the same projection: [`render_reference`]
//! evaluates every gaussian at every pixel; [`render_tiled`] bins footprints
//! to tiles and stops once transmittance drops below `t_min`. The tiled path
//! also provides the analytic backward pass.

mod image;
mod profile;
mod reference;
mod tiled;

pub use self::image::ImageBuffer;
pub use profile::{profile_render, ProfileReport, StageTiming};
pub use reference::render_reference;
pub use tiled::{render_backward, render_tiled, PreparedFrame};

use serde::{Deserialize, Serialize};

use crate::cloud::GaussianPrimitive;
use crate::math::{
    build_covariance, jw_product, perspective_jacobian, project_with, Camera, Conic, Covariance2,
    Vec2, Vec3, DEFAULT_DILATION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Contributions with `α` below this are skipped. Zero disables the cutoff
    /// (every footprint then covers the whole image).
    pub alpha_min: f64,
    /// Compositing stops once transmittance falls below this.
    pub t_min: f64,
    pub dilation: f64,
    pub background: [f64; 3],
    /// 3 for RGB, 4 to append accumulated alpha.
    pub channels: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_min: 1.0 / 255.0,
            t_min: 1e-4,
            dilation: DEFAULT_DILATION,
            background: [0.0; 3],
            channels: 3,
        }
    }
}

/// A gaussian after projection to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatRecord {
    pub index: u32,
    pub mean: Vec2,
    pub cov: Covariance2,
    pub conic: Conic,
    /// View-space z of the mean.
    pub depth: f64,
    /// Footprint radius in pixels; infinite when `alpha_min` is zero.
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Per-gaussian gradients of a scalar w.r.t. raw parameters: world
/// position, the quaternion as supplied, softplus-input scale, and logit
/// opacity and color.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    pub position: Vec<Vec3>,
    pub rotation: Vec<[f64; 4]>,
    pub scale: Vec<Vec3>,
    pub opacity: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl GradientSet {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            scale: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &GradientSet) {
        fn add<const N: usize>(a: &mut [[f64; N]], b: &[[f64; N]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..N {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.position, &other.position);
        add(&mut self.rotation, &other.rotation);
        add(&mut self.scale, &other.scale);
        add(&mut self.color, &other.color);
        for (x, y) in self.opacity.iter_mut().zip(&other.opacity) {
            *x += y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.as_flattened().iter().all(|v| v.is_finite())
            && self.rotation.as_flattened().iter().all(|v| v.is_finite())
            && self.scale.as_flattened().iter().all(|v| v.is_finite())
            && self.opacity.iter().all(|v| v.is_finite())
            && self.color.as_flattened().iter().all(|v| v.is_finite())
    }
}

/// Footprint radius covering every pixel where `α ≥ alpha_min`.
fn footprint_radius(cov: &Covariance2, opacity: f64, alpha_min: f64) -> f64 {
    if alpha_min <= 0.0 {
        return f64::INFINITY;
    }
    let (lambda_max, _) = cov.eigenvalues();
    let mahalanobis2 = 2.0 * (opacity / alpha_min).ln();
    let r = (mahalanobis2 * lambda_max).sqrt();
    (r * (1.0 + 1e-9) + 1e-9).max(1.0)
}

/// Projects one primitive; `None` when it is culled or can never reach `alpha_min`.
pub fn project_splat(
    index: usize,
    g: &GaussianPrimitive,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Option<SplatRecord> {
    if cfg.alpha_min > 0.0 && g.opacity < cfg.alpha_min {
        return None;
    }
    let t = cam.to_camera(g.position);
    let j = perspective_jacobian(cam, t)?;
    let cov3 = build_covariance(g.rotation, g.scale).ok()?;
    let tm = jw_product(&j, &cam.world_to_camera.rotation);
    let cov = project_with(&tm, &cov3, cfg.dilation);
    let conic = cov.inverse()?;
    Some(SplatRecord {
        index: index as u32,
        mean: cam.project_camera_point(t),
        cov,
        conic,
        depth: t[2],
        radius: footprint_radius(&cov, g.opacity, cfg.alpha_min),
        opacity: g.opacity,
        color: g.color,
    })
}

pub fn project_splats(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &RenderConfig,
) -> Vec<Option<SplatRecord>> {
    primitives
        .iter()
        .enumerate()
        .map(|(i, g)| project_splat(i, g, cam, cfg))
        .collect()
}

/// Visible splats ordered by ascending depth, ties by ascending index.
pub(crate) fn depth_order(splats: &[Option<SplatRecord>]) -> Vec<SplatRecord> {
    let mut v: Vec<SplatRecord> = splats.iter().flatten().copied().collect();
    v.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    v
}

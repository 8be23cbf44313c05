use std::time::Instant;

use serde::Serialize;

use super::tiled::{project_stage, sort_stage, PreparedFrame};
use super::RenderConfig;
use crate::cloud::GaussianPrimitive;
use crate::error::{Error, Result};
use crate::math::Camera;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub mean_ms: f64,
    pub min_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub gaussians: usize,
    pub visible: usize,
    pub width: usize,
    pub height: usize,
    pub repeats: usize,
    pub stages: Vec<StageTiming>,
    pub total_mean_ms: f64,
}

impl ProfileReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} gaussians ({} visible), {}x{}, {} repeats\n{:<12} {:>10} {:>10}\n",
            self.gaussians, self.visible, self.width, self.height, self.repeats, "stage", "mean ms", "min ms"
        );
        for t in &self.stages {
            s += &format!("{:<12} {:>10.3} {:>10.3}\n", t.stage, t.mean_ms, t.min_ms);
        }
        s += &format!("{:<12} {:>10.3}\n", "total", self.total_mean_ms);
        s
    }
}

/// Times projection, sorting, binning and compositing of the tiled renderer.
pub fn profile_render(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &RenderConfig,
    repeats: usize,
) -> Result<ProfileReport> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    // validates the configuration once
    PreparedFrame::new(&[], cam, cfg)?;
    let names = ["projection", "sorting", "binning", "compositing"];
    let mut samples = vec![Vec::with_capacity(repeats); 4];
    let mut visible = 0;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let projected = project_stage(primitives, cam, cfg);
        let t1 = Instant::now();
        let sorted = sort_stage(projected);
        let t2 = Instant::now();
        visible = sorted.len();
        let frame = PreparedFrame::from_sorted(sorted, primitives.len(), cam, cfg);
        let t3 = Instant::now();
        std::hint::black_box(frame.composite());
        let t4 = Instant::now();
        for (k, (a, b)) in [(t0, t1), (t1, t2), (t2, t3), (t3, t4)].into_iter().enumerate() {
            samples[k].push((b - a).as_secs_f64() * 1e3);
        }
    }
    let stages: Vec<StageTiming> = names
        .iter()
        .zip(&samples)
        .map(|(n, s)| StageTiming {
            stage: n.to_string(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            min_ms: s.iter().copied().fold(f64::INFINITY, f64::min),
        })
        .collect();
    let total_mean_ms = stages.iter().map(|s| s.mean_ms).sum();
    Ok(ProfileReport {
        gaussians: primitives.len(),
        visible,
        width: cam.width,
        height: cam.height,
        repeats,
        stages,
        total_mean_ms,
    })
}

//! Direct per-frame fitting of [`AvatarParams`] with Adam.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{AvatarModel, AvatarParams, ParamGroup, PipelineGrads};
use crate::error::{Error, Result};
use crate::loss::{total_objective_with_grads, DeltaView, LossReport, LossWeights, ObjectiveInputs};
use crate::math::{Camera, Vec3};
use crate::mesh::landmark_positions;
use crate::render::{GradientSet, ImageBuffer, PreparedFrame, RenderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub vertex_offsets: f64,
    pub pose_rotation: f64,
    pub pose_translation: f64,
    pub delta_position: f64,
    pub delta_rotation: f64,
    pub delta_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            vertex_offsets: 1e-4,
            pose_rotation: 5e-4,
            pose_translation: 5e-4,
            delta_position: 1e-4,
            delta_rotation: 1e-4,
            delta_scale: 1e-4,
            opacity: 6e-4,
            color: 6e-4,
        }
    }
}

impl LearningRates {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::VertexOffsets => self.vertex_offsets,
            ParamGroup::PoseRotation => self.pose_rotation,
            ParamGroup::PoseTranslation => self.pose_translation,
            ParamGroup::DeltaPosition => self.delta_position,
            ParamGroup::DeltaRotation => self.delta_rotation,
            ParamGroup::DeltaScale => self.delta_scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Color => self.color,
        }
    }

    /// Every rate multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            vertex_offsets: self.vertex_offsets * k,
            pose_rotation: self.pose_rotation * k,
            pose_translation: self.pose_translation * k,
            delta_position: self.delta_position * k,
            delta_rotation: self.delta_rotation * k,
            delta_scale: self.delta_scale * k,
            opacity: self.opacity * k,
            color: self.color * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub rates: LearningRates,
    pub weights: LossWeights,
    /// Views rendered per iteration; 0 means all of them.
    pub cameras_per_step: usize,
    /// Snapshot cadence in iterations; 0 writes only the final state.
    pub snapshot_every: usize,
    pub seed: u64,
    /// Groups updated by the optimizer; the rest stay frozen.
    pub groups: Vec<ParamGroup>,
    pub render: RenderConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            rates: LearningRates::default(),
            weights: LossWeights::default(),
            cameras_per_step: 0,
            snapshot_every: 0,
            seed: 0,
            groups: ParamGroup::ALL.to_vec(),
            render: RenderConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        for g in ParamGroup::ALL {
            let r = self.rates.get(g);
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid(format!("learning rate for `{}` must be positive", g.name())));
            }
        }
        self.weights.validate()
    }
}

/// Adam moments for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rates: LearningRates,
    m: AvatarParams,
    v: AvatarParams,
}

impl AdamState {
    pub fn new(like: &AvatarParams, rates: LearningRates) -> Self {
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rates,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// One bias-corrected Adam update of the `groups` of `params`. A
    /// non-finite gradient rejects the whole step.
    pub fn step(&mut self, params: &mut AvatarParams, grads: &AvatarParams, groups: &[ParamGroup]) -> Result<()> {
        for &g in groups {
            let values = grads.group_values(g);
            if values.len() != params.group_values(g).len() {
                return Err(Error::invalid(format!("gradient shape mismatch in `{}`", g.name())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { group: g.name() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for &g in groups {
            let lr = self.rates.get(g);
            let gv = grads.group_values(g);
            let mut m = self.m.group_values(g).into_owned();
            let mut v = self.v.group_values(g).into_owned();
            params.with_group_mut(g, |p| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * gv[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * gv[i] * gv[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            });
            self.m.with_group_mut(g, |d| d.copy_from_slice(&m));
            self.v.with_group_mut(g, |d| d.copy_from_slice(&v));
        }
        Ok(())
    }
}

/// Supervision for one frame.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageBuffer>,
    /// `v_s`, enables the geometric term.
    pub tracked_vertices: Option<Vec<Vec3>>,
    /// `M_r`, enables the landmark term.
    pub reference_landmarks: Option<Vec<Vec3>>,
}

impl FrameTargets {
    fn validate(&self, model: &AvatarModel, render: &RenderConfig) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::invalid("a frame needs at least one camera"));
        }
        if self.cameras.len() != self.images.len() {
            return Err(Error::invalid(format!(
                "{} cameras but {} target images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            if img.width != c.width || img.height != c.height || img.channels != render.channels {
                return Err(Error::invalid(format!(
                    "target {i} is {}x{}x{}, camera expects {}x{}x{}",
                    img.width, img.height, img.channels, c.width, c.height, render.channels
                )));
            }
        }
        if let Some(v) = &self.tracked_vertices {
            if v.len() != model.vertex_count() {
                return Err(Error::invalid("tracked vertex count differs from the template"));
            }
        }
        if let Some(l) = &self.reference_landmarks {
            if l.len() != model.template.landmarks.len() {
                return Err(Error::invalid("reference landmark count differs from the template"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: AvatarParams,
    /// One report per iteration, evaluated before that iteration's update,
    /// plus the report of the final parameters.
    pub history: Vec<LossReport>,
}

/// Objective value and its gradient w.r.t. every parameter group.
pub fn evaluate(
    model: &AvatarModel,
    params: &AvatarParams,
    targets: &FrameTargets,
    views: &[usize],
    previous: Option<&AvatarParams>,
    weights: &LossWeights,
    render: &RenderConfig,
) -> Result<(LossReport, AvatarParams, Vec<ImageBuffer>)> {
    let state = model.forward(params)?;
    let mut frames = Vec::with_capacity(views.len());
    let mut rendered = Vec::with_capacity(views.len());
    for &v in views {
        let f = PreparedFrame::new(&state.primitives, &targets.cameras[v], render)?;
        rendered.push(f.composite());
        frames.push(f);
    }
    let target_refs: Vec<&ImageBuffer> = views.iter().map(|&v| &targets.images[v]).collect();
    let posed_landmarks = match &targets.reference_landmarks {
        Some(_) => Some(landmark_positions(&state.posed, &model.template)?),
        None => None,
    };
    let scales: Vec<Vec3> = state.primitives.iter().map(|p| p.scale).collect();
    let inputs = ObjectiveInputs {
        rendered: &rendered,
        targets: &target_refs,
        geometry: targets
            .tracked_vertices
            .as_deref()
            .map(|vs| (state.deformed.vertices.as_slice(), vs)),
        landmarks: match (&posed_landmarks, &targets.reference_landmarks) {
            (Some(p), Some(r)) => Some((p.as_slice(), r.as_slice())),
            _ => None,
        },
        regularization: Some((&scales, &params.delta_position, &params.delta_rotation)),
        temporal: previous.map(|prev| {
            (
                DeltaView {
                    position: &prev.delta_position,
                    rotation: &prev.delta_rotation,
                    scale: &prev.delta_scale,
                },
                DeltaView {
                    position: &params.delta_position,
                    rotation: &params.delta_rotation,
                    scale: &params.delta_scale,
                },
            )
        }),
    };
    let (report, g) = total_objective_with_grads(&inputs, weights)?;

    let mut render_grads = GradientSet::zeros(state.primitives.len());
    for ((f, &v), gi) in frames.iter().zip(views).zip(&g.images) {
        render_grads.accumulate(&f.backward(&state.primitives, &targets.cameras[v], gi)?);
    }
    let posed = g.landmarks.map(|gl| {
        let mut d = vec![[0.0; 3]; model.vertex_count()];
        for (&idx, gv) in model.template.landmarks.iter().zip(&gl) {
            for k in 0..3 {
                d[idx][k] += gv[k];
            }
        }
        d
    });
    let extra = PipelineGrads {
        deformed: g.deformed,
        posed,
        scale: g.scales,
        delta_position: g.delta_position,
        delta_rotation: g.delta_rotation,
        delta_scale: g.delta_scale,
    };
    let grads = model.backward(params, &state, &render_grads, &extra)?;
    Ok((report, grads, rendered))
}

/// Fits one frame from `init`. `previous` enables the temporal term;
/// `on_snapshot(iteration, params)` runs at the configured cadence.
pub fn fit_frame(
    model: &AvatarModel,
    targets: &FrameTargets,
    init: AvatarParams,
    previous: Option<&AvatarParams>,
    cfg: &FitConfig,
    on_snapshot: &mut dyn FnMut(usize, &AvatarParams) -> Result<()>,
) -> Result<FitResult> {
    cfg.validate()?;
    targets.validate(model, &cfg.render)?;
    let n_views = targets.cameras.len();
    let per_step = if cfg.cameras_per_step == 0 {
        n_views
    } else {
        cfg.cameras_per_step.min(n_views)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all_views: Vec<usize> = (0..n_views).collect();
    let mut params = init;
    let mut adam = AdamState::new(&params, cfg.rates);
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let views = if per_step == n_views || it == cfg.iterations {
            all_views.clone()
        } else {
            let mut v = sample(&mut rng, n_views, per_step).into_vec();
            v.sort_unstable();
            v
        };
        let (report, grads, _) =
            evaluate(model, &params, targets, &views, previous, &cfg.weights, &cfg.render)?;
        if !report.total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                params: Box::new(params),
            });
        }
        history.push(report);
        if it == cfg.iterations {
            break;
        }
        if it % 100 == 0 {
            log::debug!("iteration {it}: total {:.6e}", report.total);
        }
        adam.step(&mut params, &grads, &cfg.groups)?;
        if cfg.snapshot_every > 0 && (it + 1) % cfg.snapshot_every == 0 && it + 1 < cfg.iterations {
            on_snapshot(it + 1, &params)?;
        }
    }
    on_snapshot(cfg.iterations, &params)?;
    Ok(FitResult { params, history })
}

/// Fits frames in order; each frame starts from the previous solution and
/// is tied to its deltas by the temporal term.
pub fn fit_sequence(
    model: &AvatarModel,
    frames: &[FrameTargets],
    init: AvatarParams,
    cfg: &FitConfig,
    on_snapshot: &mut dyn FnMut(usize, usize, &AvatarParams) -> Result<()>,
) -> Result<Vec<FitResult>> {
    if frames.is_empty() {
        return Err(Error::invalid("a sequence needs at least one frame"));
    }
    let mut out: Vec<FitResult> = Vec::with_capacity(frames.len());
    let mut start = init;
    for (t, frame) in frames.iter().enumerate() {
        let previous = out.last().map(|r| &r.params);
        let result = fit_frame(model, frame, start, previous, cfg, &mut |it, p| on_snapshot(t, it, p))
            .map_err(|e| Error::InFrame {
                frame: t,
                source: Box::new(e),
            })?;
        log::info!(
            "frame {t}: total {:.6e} -> {:.6e}",
            result.history[0].total,
            result.history.last().unwrap().total
        );
        start = result.params.clone();
        out.push(result);
    }
    Ok(out)
}

/// Peak signal-to-noise ratio on [0, 1] data, capped at 99 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

pub const PSNR_CAP: f64 = 99.0;

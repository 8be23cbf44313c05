mod common;

use common::{rel_err, rng};
use rand::Rng;
use splat_avatar::cloud::{AvatarModel, AvatarParams, ParamGroup};
use splat_avatar::error::Error;
use splat_avatar::fit::{evaluate, fit_frame, fit_sequence, AdamState, FitConfig, FrameTargets, LearningRates};
use splat_avatar::loss::{lmk_loss, LossWeights};
use splat_avatar::math::{Camera, Quaternion};
use splat_avatar::mesh::{build_uv_sample_table, landmark_positions, procedural::low_poly_head, RigidPose};
use splat_avatar::render::{render_tiled, RenderConfig};

fn model() -> AvatarModel {
    let t = low_poly_head();
    let table = build_uv_sample_table(&t, 16).unwrap();
    let zero = AvatarParams::zeros(t.vertex_count(), table.valid_count());
    AvatarModel::new(t, table, &zero).unwrap()
}

fn cameras() -> Vec<Camera> {
    [-0.6f64, 0.5]
        .iter()
        .map(|a| Camera::look_at(40, 40, 60.0, [0.4 * a.sin(), 0.04, 0.4 * a.cos()], [0.0; 3], [0.0, 1.0, 0.0]).unwrap())
        .collect()
}

fn truth(model: &AvatarModel) -> AvatarParams {
    let mut p = model.zero_params();
    for (i, o) in p.opacity.iter_mut().enumerate() {
        *o = 2.0 + (i as f64 * 0.37).sin();
    }
    for (i, c) in p.color.iter_mut().enumerate() {
        let x = i as f64;
        *c = [(0.3 * x).sin(), (0.17 * x).cos(), 0.5 - (0.05 * x).sin()];
    }
    p
}

fn targets_for(model: &AvatarModel, params: &AvatarParams, cfg: &RenderConfig) -> FrameTargets {
    let state = model.forward(params).unwrap();
    let cameras = cameras();
    let images = cameras.iter().map(|c| render_tiled(&state.primitives, c, cfg).unwrap()).collect();
    FrameTargets {
        cameras,
        images,
        tracked_vertices: Some(state.deformed.vertices.clone()),
        reference_landmarks: Some(landmark_positions(&state.posed, &model.template).unwrap()),
    }
}

fn jitter(p: &mut AvatarParams, r: &mut impl Rng, s: f64) {
    for g in ParamGroup::ALL {
        if matches!(g, ParamGroup::PoseRotation | ParamGroup::PoseTranslation) {
            continue;
        }
        p.with_group_mut(g, |v| v.iter_mut().for_each(|x| *x += r.random_range(-s..s)));
    }
}

fn no_perceptual() -> LossWeights {
    LossWeights { perceptual: 0.0, ..LossWeights::default() }
}

#[test]
fn adam_converges_on_a_quadratic_bowl() {
    let mut p = AvatarParams::zeros(0, 1);
    p.opacity[0] = 3.0;
    let rates = LearningRates { opacity: 0.1, ..LearningRates::default() };
    let mut adam = AdamState::new(&p, rates);
    for _ in 0..500 {
        let mut g = p.zeros_like();
        g.opacity[0] = 2.0 * p.opacity[0];
        adam.step(&mut p, &g, &[ParamGroup::Opacity]).unwrap();
    }
    assert!(p.opacity[0].abs() < 1e-3, "x = {}", p.opacity[0]);
}

#[test]
fn pipeline_gradient_matches_finite_differences() {
    let m = model();
    let cfg = RenderConfig { alpha_min: 0.0, t_min: 0.0, ..RenderConfig::default() };
    let mut r = rng(31);
    let mut target_params = truth(&m);
    target_params.pose.translation = [0.004, -0.002, 0.003];
    let targets = targets_for(&m, &target_params, &cfg);
    let mut params = truth(&m);
    jitter(&mut params, &mut r, 0.02);
    params.pose = RigidPose {
        rotation: Quaternion::from_axis_angle([0.3, 1.0, 0.2], 0.03).unwrap(),
        translation: [-0.003, 0.002, 0.001],
    };
    let mut previous = params.clone();
    jitter(&mut previous, &mut r, 0.01);
    let w = no_perceptual();
    let views = [0, 1];
    let total = |p: &AvatarParams| evaluate(&m, p, &targets, &views, Some(&previous), &w, &cfg).unwrap().0.total;
    let (_, grads, _) = evaluate(&m, &params, &targets, &views, Some(&previous), &w, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for g in ParamGroup::ALL {
        let analytic = grads.group_values(g).into_owned();
        let n = analytic.len();
        let mut picks: Vec<usize> = (0..n).collect();
        picks.sort_by(|a, b| analytic[*b].abs().total_cmp(&analytic[*a].abs()));
        picks.truncate(4);
        for i in picks {
            let h = 1e-6;
            let bump = |d: f64| {
                let mut p = params.clone();
                p.with_group_mut(g, |v| v[i] += d);
                total(&p)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let e = rel_err(analytic[i], fd);
            assert!(e <= 1e-3, "{} [{i}]: analytic {} fd {fd}", g.name(), analytic[i]);
            worst = worst.max(e);
        }
    }
    assert!(worst < 1e-3);
}

#[test]
fn every_parameter_group_receives_gradient() {
    let m = model();
    let cfg = RenderConfig::default();
    let mut r = rng(7);
    let targets = targets_for(&m, &truth(&m), &cfg);
    let mut params = truth(&m);
    jitter(&mut params, &mut r, 0.05);
    params.pose.translation = [0.01, 0.0, 0.0];
    let (_, grads, _) = evaluate(&m, &params, &targets, &[0, 1], None, &no_perceptual(), &cfg).unwrap();
    for g in ParamGroup::ALL {
        let v = grads.group_values(g);
        assert!(v.iter().any(|x| *x != 0.0), "{} got no gradient", g.name());
        assert!(v.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn one_step_reduces_landmark_loss() {
    let m = model();
    let cfg = RenderConfig::default();
    let targets = targets_for(&m, &truth(&m), &cfg);
    let mut params = truth(&m);
    params.pose.translation = [0.01, -0.02, 0.005];
    let w = LossWeights { l1: 0.0, ssim: 0.0, geo: 0.0, perceptual: 0.0, temp: 0.0, lmk: 0.8, reg: 0.0 };
    let lmk = |p: &AvatarParams| {
        let posed = m.forward(p).unwrap().posed;
        lmk_loss(&landmark_positions(&posed, &m.template).unwrap(), targets.reference_landmarks.as_ref().unwrap())
            .unwrap()
    };
    let before = lmk(&params);
    let (_, grads, _) = evaluate(&m, &params, &targets, &[0], None, &w, &cfg).unwrap();
    let mut adam = AdamState::new(&params, LearningRates::default());
    adam.step(&mut params, &grads, &[ParamGroup::PoseRotation, ParamGroup::PoseTranslation]).unwrap();
    assert!(lmk(&params) < before);
}

#[test]
fn truth_is_a_fixed_point() {
    let m = model();
    let cfg = FitConfig {
        iterations: 15,
        weights: LossWeights { reg: 0.0, temp: 0.0, perceptual: 0.0, ..LossWeights::default() },
        ..FitConfig::default()
    };
    let p = truth(&m);
    let targets = targets_for(&m, &p, &cfg.render);
    let result = fit_frame(&m, &targets, p.clone(), None, &cfg, &mut |_, _| Ok(())).unwrap();
    assert!(result.history.iter().all(|r| r.total.abs() <= 1e-6));
    assert_eq!(result.history.len(), 16);
    assert_eq!(result.params, p);
}

fn short_config() -> FitConfig {
    FitConfig {
        iterations: 12,
        weights: no_perceptual(),
        rates: LearningRates::default().scaled(10.0),
        ..FitConfig::default()
    }
}

#[test]
fn single_frame_sequence_equals_fit_frame() {
    let m = model();
    let cfg = short_config();
    let targets = targets_for(&m, &truth(&m), &cfg.render);
    let mut init = truth(&m);
    jitter(&mut init, &mut rng(2), 0.1);
    let direct = fit_frame(&m, &targets, init.clone(), None, &cfg, &mut |_, _| Ok(())).unwrap();
    let mut calls = Vec::new();
    let seq = fit_sequence(&m, std::slice::from_ref(&targets), init, &cfg, &mut |t, it, _| {
        calls.push((t, it));
        Ok(())
    })
    .unwrap();
    assert_eq!(seq.len(), 1);
    assert_eq!(seq[0].params, direct.params);
    assert_eq!(seq[0].history, direct.history);
    assert_eq!(calls, vec![(0, 12)]);
}

fn mean_delta_change(a: &AvatarParams, b: &AvatarParams) -> f64 {
    let groups = [ParamGroup::DeltaPosition, ParamGroup::DeltaRotation, ParamGroup::DeltaScale];
    let mut s = 0.0;
    let mut n = 0;
    for g in groups {
        for (x, y) in a.group_values(g).iter().zip(b.group_values(g).iter()) {
            s += (x - y).abs();
            n += 1;
        }
    }
    s / n as f64
}

#[test]
fn temporal_term_pins_identical_frames() {
    let m = model();
    let targets = targets_for(&m, &truth(&m), &RenderConfig::default());
    let mut init = truth(&m);
    jitter(&mut init, &mut rng(4), 0.1);
    let frames = [targets.clone(), targets];
    let drift = |temp: f64| {
        let mut cfg = short_config();
        cfg.weights.temp = temp;
        let out = fit_sequence(&m, &frames, init.clone(), &cfg, &mut |_, _, _| Ok(())).unwrap();
        mean_delta_change(&out[0].params, &out[1].params)
    };
    let free = drift(0.0);
    let pinned = drift(50.0);
    assert!(free > 0.0);
    assert!(pinned < 0.5 * free, "pinned drift {pinned} vs free {free}");
}

#[test]
fn fitting_is_deterministic_with_camera_subsets() {
    let m = model();
    let mut cfg = short_config();
    cfg.cameras_per_step = 1;
    cfg.seed = 99;
    let targets = targets_for(&m, &truth(&m), &cfg.render);
    let mut init = truth(&m);
    jitter(&mut init, &mut rng(9), 0.1);
    let a = fit_frame(&m, &targets, init.clone(), None, &cfg, &mut |_, _| Ok(())).unwrap();
    let b = fit_frame(&m, &targets, init.clone(), None, &cfg, &mut |_, _| Ok(())).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    cfg.seed = 100;
    let c = fit_frame(&m, &targets, init, None, &cfg, &mut |_, _| Ok(())).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn snapshot_cadence() {
    let m = model();
    let mut cfg = short_config();
    cfg.snapshot_every = 5;
    let targets = targets_for(&m, &truth(&m), &cfg.render);
    let mut seen = Vec::new();
    fit_frame(&m, &targets, truth(&m), None, &cfg, &mut |it, _| {
        seen.push(it);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![5, 10, 12]);
}

#[test]
fn nan_targets_abort_with_the_current_parameters() {
    let m = model();
    let cfg = short_config();
    let mut targets = targets_for(&m, &truth(&m), &cfg.render);
    targets.images[1].data[7] = f64::NAN;
    let p = truth(&m);
    let err = fit_sequence(&m, &[targets], p.clone(), &cfg, &mut |_, _, _| Ok(())).unwrap_err();
    match &err {
        Error::InFrame { frame: 0, source } => match source.as_ref() {
            Error::Diverged { iteration: 0, params } => assert_eq!(**params, p),
            other => panic!("unexpected inner error {other}"),
        },
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().starts_with("frame 0:"));
}

#[test]
fn mismatched_targets_are_rejected() {
    let m = model();
    let cfg = short_config();
    let mut targets = targets_for(&m, &truth(&m), &cfg.render);
    targets.images.pop();
    assert!(fit_frame(&m, &targets, truth(&m), None, &cfg, &mut |_, _| Ok(())).is_err());
    let mut cfg = short_config();
    cfg.iterations = 0;
    let targets = targets_for(&m, &truth(&m), &cfg.render);
    assert!(fit_frame(&m, &targets, truth(&m), None, &cfg, &mut |_, _| Ok(())).is_err());
}

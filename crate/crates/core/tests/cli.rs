use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splat_avatar::cli::{CameraRecord, FrameConfig, SceneConfig};
use splat_avatar::cloud::snapshot::{params_to_snapshot, Snapshot};
use splat_avatar::cloud::{AvatarModel, AvatarParams};
use splat_avatar::fit::FitConfig;
use splat_avatar::math::Camera;
use splat_avatar::mesh::{build_uv_sample_table, procedural::low_poly_head, write_obj};
use splat_avatar::render::{render_tiled, ImageBuffer, RenderConfig};

fn avatar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avatar")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cameras() -> Vec<Camera> {
    [-0.4f64, 0.4]
        .iter()
        .map(|a| Camera::look_at(32, 24, 45.0, [0.4 * a.sin(), 0.0, 0.4 * a.cos()], [0.0; 3], [0.0, 1.0, 0.0]).unwrap())
        .collect()
}

/// A two-camera scene whose targets are renders of default parameters.
fn scene(dir: &Path, uv: usize) -> PathBuf {
    let template = low_poly_head();
    std::fs::write(dir.join("head.obj"), write_obj(&template)).unwrap();
    let table = build_uv_sample_table(&template, uv).unwrap();
    let zero = AvatarParams::zeros(template.vertex_count(), table.valid_count());
    let model = AvatarModel::new(template.clone(), table, &zero).unwrap();
    let state = model.forward(&zero).unwrap();
    let mut cams = Vec::new();
    let mut targets = Vec::new();
    for (i, c) in cameras().iter().enumerate() {
        let name = format!("cam{i}.json");
        std::fs::write(dir.join(&name), serde_json::to_string(&CameraRecord::from_camera(c)).unwrap()).unwrap();
        let img = render_tiled(&state.primitives, c, &RenderConfig::default()).unwrap();
        let tname = format!("target{i}.png");
        img.write_png(&dir.join(&tname)).unwrap();
        cams.push(name.into());
        targets.push(tname.into());
    }
    let config = SceneConfig {
        template: "head.obj".into(),
        landmarks: template.landmarks.clone(),
        cameras: cams,
        frames: vec![FrameConfig { targets, tracked_vertices: None, reference_landmarks: None }],
        uv_resolution: uv,
        fit: FitConfig { iterations: 3, ..FitConfig::default() },
        initial_snapshot: None,
    };
    let path = dir.join(format!("scene_{uv}.json"));
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn filled(value: f64) -> ImageBuffer {
    ImageBuffer::filled(16, 12, 3, value)
}

#[test]
fn fit_then_render_orbit_and_single_view() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = scene(dir, 12);
    let out = dir.join("fit");
    let o = avatar(&["fit", "--config", s(&config), "--out", s(&out), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("loss_history.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "frame,iteration,l1,dssim,geo,perceptual,temp,lmk,reg,total");
    assert_eq!(lines.count(), 4);

    let orbit: Vec<CameraRecord> = cameras().iter().map(CameraRecord::from_camera).collect();
    std::fs::write(dir.join("orbit.json"), serde_json::to_string(&orbit).unwrap()).unwrap();
    let snap = out.join("frame_000.snap");
    let views = dir.join("views");
    let o = avatar(&[
        "render", "--config", s(&config), "--snapshot", s(&snap), "--camera", s(&dir.join("orbit.json")),
        "--out", s(&views), "--background", "0,0,1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["view_000.png", "view_001.png"] {
        let img = ImageBuffer::read_png(&views.join(name)).unwrap();
        assert_eq!((img.width, img.height, img.channels), (32, 24, 3));
        assert_eq!(img.pixel(0, 0), &[0.0, 0.0, 1.0]);
    }
    let single = dir.join("one.png");
    let o = avatar(&[
        "render", "--config", s(&config), "--snapshot", s(&snap), "--camera", s(&dir.join("cam1.json")),
        "--out", s(&single),
    ]);
    assert!(o.status.success());
    assert_eq!(ImageBuffer::read_png(&single).unwrap().width, 32);

    let o = avatar(&[
        "profile", "--config", s(&config), "--snapshot", s(&snap), "--camera", s(&dir.join("cam0.json")),
        "--repeats", "2", "--out", s(&dir.join("profile.json")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    for stage in ["projection", "sorting", "binning", "compositing", "total"] {
        assert!(table.contains(stage), "{table}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("profile.json")).unwrap()).unwrap();
    assert_eq!(json["repeats"], 2);
    assert_eq!(json["stages"].as_array().unwrap().len(), 4);
}

#[test]
fn mismatched_snapshot_names_the_array() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let small = scene(dir, 10);
    let large = scene(dir, 14);
    let template = low_poly_head();
    let table = build_uv_sample_table(&template, 10).unwrap();
    let params = AvatarParams::zeros(template.vertex_count(), table.valid_count());
    let snap = dir.join("small.snap");
    params_to_snapshot(&params, &vec![0.01; table.valid_count()], 0, 10).write(&snap).unwrap();
    let ok = avatar(&[
        "render", "--config", s(&small), "--snapshot", s(&snap), "--camera", s(&dir.join("cam0.json")),
        "--out", s(&dir.join("a.png")),
    ]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = avatar(&[
        "render", "--config", s(&large), "--snapshot", s(&snap), "--camera", s(&dir.join("cam0.json")),
        "--out", s(&dir.join("b.png")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("snapshot array `delta_position`"), "{msg}");
    assert!(Snapshot::read(&snap).is_ok());
}

#[test]
fn eval_identical_and_constant_offset_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for d in [&a, &b, &c] {
        std::fs::create_dir(d).unwrap();
    }
    for name in ["x.png", "y.png"] {
        filled(100.0 / 255.0).write_png(&a.join(name)).unwrap();
        filled(100.0 / 255.0).write_png(&b.join(name)).unwrap();
        filled(110.0 / 255.0).write_png(&c.join(name)).unwrap();
    }
    let report = tmp.path().join("same.json");
    let o = avatar(&["eval", "--rendered", s(&a), "--targets", s(&b), "--out", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["mean"]["psnr"], 99.0);
    assert_eq!(v["mean"]["ssim"], 1.0);
    assert_eq!(v["mean"]["l1"], 0.0);

    let o = avatar(&["eval", "--rendered", s(&c), "--targets", s(&a)]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    let json_start = stdout.find('{').unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout[json_start..]).unwrap();
    let l1 = v["mean"]["l1"].as_f64().unwrap();
    let psnr = v["mean"]["psnr"].as_f64().unwrap();
    assert!((l1 - 10.0).abs() < 1e-9, "l1 {l1}");
    assert!((psnr - 20.0 * (255.0f64 / 10.0).log10()).abs() < 1e-9, "psnr {psnr}");
    assert!((psnr - 28.13).abs() < 0.01);
}

#[test]
fn eval_lists_missing_pairs_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir(&a).unwrap();
    std::fs::create_dir(&b).unwrap();
    filled(0.5).write_png(&a.join("shared.png")).unwrap();
    filled(0.5).write_png(&b.join("shared.png")).unwrap();
    filled(0.5).write_png(&a.join("only_rendered.png")).unwrap();
    let report = tmp.path().join("r.json");
    let o = avatar(&["eval", "--rendered", s(&a), "--targets", s(&b), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["missing"], serde_json::json!(["only_rendered.png"]));
    assert_eq!(v["images"].as_array().unwrap().len(), 1);
    assert_eq!(v["mean"]["psnr"], 99.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("missing: only_rendered.png"));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"template":"x.obj","cameras":[],"uv_resolution":1}"#).unwrap();
    let o = avatar(&["fit", "--config", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("uv_resolution"));
    let o = avatar(&["render", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let o = avatar(&["eval", "--rendered", "a", "--targets", "b", "--threads", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(avatar(&["--version"]).status.success());
}

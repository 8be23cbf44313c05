use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{read_cameras, write_json, Scene};
use super::Failure;
use crate::cloud::snapshot::{params_to_snapshot, snapshot_to_params, Snapshot};
use crate::cloud::{AvatarModel, AvatarParams};
use crate::error::{Error, Result};
use crate::fit::{fit_sequence, psnr, FitConfig};
use crate::loss::{l1_loss, ssim, LossReport};
use crate::math::Camera;
use crate::render::{profile_render, render_tiled, RenderConfig};

/// Command-line adjustments layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tile_size: Option<usize>,
    pub background: Option<[f64; 3]>,
}

impl Overrides {
    pub fn apply_render(&self, cfg: &mut RenderConfig) {
        if let Some(t) = self.tile_size {
            cfg.tile_size = t;
        }
        if let Some(b) = self.background {
            cfg.background = b;
        }
    }

    pub fn apply_fit(&self, cfg: &mut FitConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        self.apply_render(&mut cfg.render);
    }
}

struct Loaded {
    model: AvatarModel,
    params: AvatarParams,
    render: RenderConfig,
}

fn load_snapshot_model(config: &Path, snapshot: &Path, overrides: &Overrides) -> Result<Loaded> {
    let scene = Scene::load(config)?;
    let template = scene.template()?;
    let table = scene.table(&template)?;
    let mut render = scene.config.fit.render;
    overrides.apply_render(&mut render);
    let snap = Snapshot::read(snapshot)?;
    let (params, init_scales) = snapshot_to_params(&snap, template.vertex_count(), table.valid_count())?;
    let model = AvatarModel::with_init_scales(template, table, init_scales)?;
    Ok(Loaded { model, params, render })
}

fn load_cameras(path: &Path) -> Result<Vec<Camera>, Failure> {
    read_cameras(path).map_err(Failure::input)
}

pub fn render(
    config: &Path,
    snapshot: &Path,
    camera: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), Failure> {
    let loaded = load_snapshot_model(config, snapshot, overrides).map_err(Failure::input)?;
    let cameras = load_cameras(camera)?;
    let state = loaded.model.forward(&loaded.params).map_err(Failure::runtime)?;
    if cameras.len() == 1 {
        let img = render_tiled(&state.primitives, &cameras[0], &loaded.render).map_err(Failure::input)?;
        return img.write_png(out).map_err(Failure::runtime);
    }
    std::fs::create_dir_all(out).map_err(|e| Failure::runtime(Error::io(out, e)))?;
    for (i, cam) in cameras.iter().enumerate() {
        let img = render_tiled(&state.primitives, cam, &loaded.render).map_err(Failure::input)?;
        img.write_png(&out.join(format!("view_{i:03}.png"))).map_err(Failure::runtime)?;
    }
    log::info!("wrote {} views to {}", cameras.len(), out.display());
    Ok(())
}

fn snapshot_name(frame: usize, iteration: usize, final_iteration: usize) -> String {
    if iteration == final_iteration {
        format!("frame_{frame:03}.snap")
    } else {
        format!("frame_{frame:03}_iter_{iteration:05}.snap")
    }
}

fn write_history(path: &Path, histories: &[Vec<LossReport>]) -> Result<()> {
    let to_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    let mut header = vec!["frame", "iteration"];
    header.extend(LossReport::CSV_COLUMNS);
    w.write_record(&header).map_err(to_err)?;
    for (t, history) in histories.iter().enumerate() {
        for (it, r) in history.iter().enumerate() {
            let mut row = vec![t.to_string(), it.to_string()];
            row.extend(r.values().iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn fit(config: &Path, out: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let scene = Scene::load(config).map_err(Failure::input)?;
    let mut cfg = scene.config.fit.clone();
    overrides.apply_fit(&mut cfg);
    cfg.validate().map_err(Failure::input)?;
    if cfg.weights.perceptual != 0.0 {
        log::warn!("the perceptual term is not implemented and contributes 0 regardless of its weight");
    }
    let n_g = scene.config.uv_resolution;
    let (model, init, frames) = (|| {
        let template = scene.template()?;
        let table = scene.table(&template)?;
        let cameras = scene.cameras()?;
        let frames = scene.frames(&cameras, cfg.render.channels)?;
        let (model, init) = match &scene.config.initial_snapshot {
            Some(p) => {
                let snap = Snapshot::read(&scene.resolve(p))?;
                let (params, scales) = snapshot_to_params(&snap, template.vertex_count(), table.valid_count())?;
                (AvatarModel::with_init_scales(template, table, scales)?, params)
            }
            None => {
                let params = AvatarParams::zeros(template.vertex_count(), table.valid_count());
                (AvatarModel::new(template, table, &params)?, params)
            }
        };
        Ok((model, init, frames))
    })()
    .map_err(Failure::input)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::runtime(Error::io(out, e)))?;
    let final_iteration = cfg.iterations;
    let scales = model.init_scales().to_vec();
    let result = fit_sequence(&model, &frames, init, &cfg, &mut |t, it, p| {
        params_to_snapshot(p, &scales, t, n_g).write(&out.join(snapshot_name(t, it, final_iteration)))
    });
    match result {
        Ok(results) => {
            let histories: Vec<_> = results.into_iter().map(|r| r.history).collect();
            write_history(&out.join("loss_history.csv"), &histories).map_err(Failure::runtime)
        }
        Err(e) => {
            if let Error::InFrame { frame, source } = &e {
                if let Error::Diverged { params, .. } = source.root() {
                    let path = out.join(format!("frame_{frame:03}_diverged.snap"));
                    match params_to_snapshot(params, &scales, *frame, n_g).write(&path) {
                        Ok(()) => log::error!("diagnostic snapshot written to {}", path.display()),
                        Err(w) => log::error!("could not write diagnostic snapshot: {w}"),
                    }
                }
            }
            Err(Failure::runtime(e))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute difference on the 0–255 scale.
    pub l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub images: Vec<ImageMetrics>,
    pub mean: Option<MeanMetrics>,
    /// Files present in only one directory, or pairs that could not be compared.
    pub missing: Vec<String>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<32} {:>8} {:>8} {:>8}\n", "image", "PSNR", "SSIM", "L1");
        for m in &self.images {
            s += &format!("{:<32} {:>8.3} {:>8.5} {:>8.3}\n", m.name, m.psnr, m.ssim, m.l1);
        }
        if let Some(m) = &self.mean {
            s += &format!("{:<32} {:>8.3} {:>8.5} {:>8.3}\n", "mean", m.psnr, m.ssim, m.l1);
        }
        for name in &self.missing {
            s += &format!("missing: {name}\n");
        }
        s
    }
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string());
            }
        }
    }
    Ok(out)
}

fn compare(rendered: &Path, target: &Path, name: &str) -> Result<ImageMetrics> {
    let a = crate::render::ImageBuffer::read_png(rendered)?.to_rgb();
    let b = crate::render::ImageBuffer::read_png(target)?.to_rgb();
    Ok(ImageMetrics {
        name: name.to_string(),
        psnr: psnr(&a, &b)?,
        ssim: ssim(&a, &b)?,
        l1: l1_loss(&a, &b)? * 255.0,
    })
}

/// Pairs images by file name; unmatched or incomparable files are listed
/// and left out of the means.
pub fn evaluate_dirs(rendered: &Path, targets: &Path) -> Result<EvalReport> {
    let a = png_names(rendered)?;
    let b = png_names(targets)?;
    let mut images = Vec::new();
    let mut missing: Vec<String> = a.symmetric_difference(&b).cloned().collect();
    for name in a.intersection(&b) {
        match compare(&rendered.join(name), &targets.join(name), name) {
            Ok(m) => images.push(m),
            Err(e) => {
                log::warn!("{name}: {e}");
                missing.push(name.clone());
            }
        }
    }
    missing.sort();
    let mean = (!images.is_empty()).then(|| {
        let n = images.len() as f64;
        MeanMetrics {
            psnr: images.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
            l1: images.iter().map(|m| m.l1).sum::<f64>() / n,
        }
    });
    Ok(EvalReport { images, mean, missing })
}

fn emit_json(out: Option<&PathBuf>, value: &impl Serialize) -> Result<(), Failure> {
    match out {
        Some(p) => write_json(p, value).map_err(Failure::runtime),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
            Ok(())
        }
    }
}

pub fn eval(rendered: &Path, targets: &Path, out: Option<&PathBuf>) -> Result<(), Failure> {
    let report = evaluate_dirs(rendered, targets).map_err(Failure::input)?;
    print!("{}", report.table());
    emit_json(out, &report)?;
    if report.images.is_empty() && report.missing.is_empty() {
        return Err(Failure::input(Error::invalid("no PNG files to compare")));
    }
    if !report.missing.is_empty() {
        return Err(Failure::runtime(Error::invalid(format!(
            "{} unmatched image(s): {}",
            report.missing.len(),
            report.missing.join(", ")
        ))));
    }
    Ok(())
}

pub fn profile(
    config: &Path,
    snapshot: &Path,
    camera: &Path,
    repeats: usize,
    out: Option<&PathBuf>,
    overrides: &Overrides,
) -> Result<(), Failure> {
    let loaded = load_snapshot_model(config, snapshot, overrides).map_err(Failure::input)?;
    let cameras = load_cameras(camera)?;
    if repeats == 0 {
        return Err(Failure::input(Error::invalid("repeats must be at least 1")));
    }
    let state = loaded.model.forward(&loaded.params).map_err(Failure::runtime)?;
    let report = profile_render(&state.primitives, &cameras[0], &loaded.render, repeats).map_err(Failure::input)?;
    print!("{}", report.table());
    emit_json(out, &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_names() {
        assert_eq!(snapshot_name(0, 100, 100), "frame_000.snap");
        assert_eq!(snapshot_name(2, 50, 100), "frame_002_iter_00050.snap");
    }
}

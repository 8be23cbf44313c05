//! Photometric, geometric and regularization terms of the fitting objective,
//! each with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub geo: f64,
    /// Accepted for compatibility; the perceptual term is always 0 here.
    pub perceptual: f64,
    pub temp: f64,
    pub lmk: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 0.8,
            ssim: 0.2,
            geo: 0.1,
            perceptual: 0.01,
            temp: 0.1,
            lmk: 0.8,
            reg: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.ssim, self.geo, self.perceptual, self.temp, self.lmk, self.reg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Unweighted terms and the weighted total. `dssim` is `1 − SSIM`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub dssim: f64,
    pub geo: f64,
    pub perceptual: f64,
    pub temp: f64,
    pub lmk: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted(mut self, w: &LossWeights) -> Self {
        self.total = w.l1 * self.l1
            + w.ssim * self.dssim
            + w.geo * self.geo
            + w.perceptual * self.perceptual
            + w.temp * self.temp
            + w.lmk * self.lmk
            + w.reg * self.reg;
        self
    }

    pub const CSV_COLUMNS: [&'static str; 8] =
        ["l1", "dssim", "geo", "perceptual", "temp", "lmk", "reg", "total"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.l1,
            self.dssim,
            self.geo,
            self.perceptual,
            self.temp,
            self.lmk,
            self.reg,
            self.total,
        ]
    }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: {a} vs {b} elements")));
    }
    if a == 0 {
        return Err(Error::invalid(format!("{what}: empty input")));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// image terms

/// Mean absolute per-channel difference.
pub fn l1_loss(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    rendered.check_same_shape(target)?;
    let n = rendered.data.len() as f64;
    Ok(rendered.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// L1 and its gradient w.r.t. `rendered` (0 at exact ties).
pub fn l1_with_grad(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    let value = l1_loss(rendered, target)?;
    let inv = 1.0 / rendered.data.len() as f64;
    let mut g = rendered.clone();
    for (d, t) in g.data.iter_mut().zip(&target.data) {
        *d = sign(*d - t) * inv;
    }
    Ok((value, g))
}

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Valid-mode separable correlation of a `w × h` plane with the SSIM window.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an output-sized map back to the input plane.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let m = map[y * ow + x];
            for i in 0..SSIM_WINDOW {
                tmp[(y + i) * ow + x] += k[i] * m;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let m = tmp[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * m;
            }
        }
    }
    out
}

fn check_ssim_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    a.check_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

fn plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM over the valid window positions and channels.
pub fn ssim(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    ssim_impl(rendered, target, false).map(|(v, _)| v)
}

/// SSIM and its gradient w.r.t. `rendered`.
pub fn ssim_with_grad(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    ssim_impl(rendered, target, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn ssim_impl(
    xi: &ImageBuffer,
    yi: &ImageBuffer,
    want_grad: bool,
) -> Result<(f64, Option<ImageBuffer>)> {
    check_ssim_shape(xi, yi)?;
    let k = ssim_kernel();
    let (w, h, ch) = (xi.width, xi.height, xi.channels);
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ImageBuffer::new(w, h, ch));
    for c in 0..ch {
        let x = plane(xi, c);
        let y = plane(yi, c);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let exx = filter_valid(&sq(&x, &x), w, h, &k);
        let eyy = filter_valid(&sq(&y, &y), w, h, &k);
        let exy = filter_valid(&sq(&x, &y), w, h, &k);
        let n = mx.len();
        let (mut d_mu, mut d_xx, mut d_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let inv = 1.0 / (b1 * b2 * count);
                d_mu[i] = (2.0 * uy * (a2 - a1) - 2.0 * ux * s * (b2 - b1)) * inv;
                d_xx[i] = -s * b1 * inv;
                d_xy[i] = 2.0 * a1 * inv;
            }
        }
        if let Some(g) = grad.as_mut() {
            let p_mu = filter_adjoint(&d_mu, w, h, &k);
            let p_xx = filter_adjoint(&d_xx, w, h, &k);
            let p_xy = filter_adjoint(&d_xy, w, h, &k);
            for p in 0..w * h {
                g.data[p * ch + c] = p_mu[p] + 2.0 * x[p] * p_xx[p] + y[p] * p_xy[p];
            }
        }
    }
    Ok((total / count, grad))
}

// ---------------------------------------------------------------------------
// geometry and parameter terms

/// Mean squared vertex distance.
pub fn geo_loss(v_d: &[Vec3], v_s: &[Vec3]) -> Result<f64> {
    geo_with_grad(v_d, v_s).map(|(v, _)| v)
}

pub fn geo_with_grad(v_d: &[Vec3], v_s: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_len(v_d.len(), v_s.len(), "geometric loss")?;
    let inv = 1.0 / v_d.len() as f64;
    let mut value = 0.0;
    let grad = v_d
        .iter()
        .zip(v_s)
        .map(|(a, b)| {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            value += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|v| 2.0 * v * inv)
        })
        .collect();
    Ok((value * inv, grad))
}

/// `(1/N_L) Σ ‖M_p − M_r‖₁`.
pub fn lmk_loss(posed: &[Vec3], reference: &[Vec3]) -> Result<f64> {
    lmk_with_grad(posed, reference).map(|(v, _)| v)
}

pub fn lmk_with_grad(posed: &[Vec3], reference: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_len(posed.len(), reference.len(), "landmark loss")?;
    let inv = 1.0 / posed.len() as f64;
    let mut value = 0.0;
    let grad = posed
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            value += d.iter().map(|v| v.abs()).sum::<f64>();
            d.map(|v| sign(v) * inv)
        })
        .collect();
    Ok((value * inv, grad))
}

/// Per-gaussian offsets entering the regularizer and the temporal term.
#[derive(Debug, Clone, Copy)]
pub struct DeltaView<'a> {
    pub position: &'a [Vec3],
    pub rotation: &'a [[f64; 4]],
    pub scale: &'a [Vec3],
}

impl DeltaView<'_> {
    fn check(&self) -> Result<usize> {
        let n = self.position.len();
        if self.rotation.len() != n || self.scale.len() != n {
            return Err(Error::invalid("delta arrays differ in length"));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaGrads {
    pub position: Vec<Vec3>,
    pub rotation: Vec<[f64; 4]>,
    pub scale: Vec<Vec3>,
}

/// `(1/N_G) Σ (‖s‖₁ + ‖δp‖₁ + ‖δr‖₁)` with `s` the activated scales.
pub fn reg_loss(scales: &[Vec3], delta_position: &[Vec3], delta_rotation: &[[f64; 4]]) -> Result<f64> {
    reg_with_grad(scales, delta_position, delta_rotation).map(|(v, _)| v)
}

/// Returns the gradient w.r.t. `(scales, δp, δr)` in a [`DeltaGrads`] whose
/// `scale` field is w.r.t. the activated scales.
pub fn reg_with_grad(
    scales: &[Vec3],
    delta_position: &[Vec3],
    delta_rotation: &[[f64; 4]],
) -> Result<(f64, DeltaGrads)> {
    check_len(scales.len(), delta_position.len(), "regularizer")?;
    check_len(scales.len(), delta_rotation.len(), "regularizer")?;
    let inv = 1.0 / scales.len() as f64;
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let value: f64 = scales.iter().map(|s| l1(s)).sum::<f64>()
        + delta_position.iter().map(|p| l1(p)).sum::<f64>()
        + delta_rotation.iter().map(|r| l1(r)).sum::<f64>();
    let grads = DeltaGrads {
        position: delta_position.iter().map(|p| p.map(|v| sign(v) * inv)).collect(),
        rotation: delta_rotation.iter().map(|r| r.map(|v| sign(v) * inv)).collect(),
        scale: scales.iter().map(|s| s.map(|v| sign(v) * inv)).collect(),
    };
    Ok((value * inv, grads))
}

/// `(1/N_G) Σ (‖Δδp‖₁ + ‖Δδs‖₁ + ‖Δδr‖₁)` between consecutive frames.
pub fn temp_loss(previous: &DeltaView, current: &DeltaView) -> Result<f64> {
    temp_with_grad(previous, current).map(|(v, _)| v)
}

/// Gradient is w.r.t. `current`.
pub fn temp_with_grad(previous: &DeltaView, current: &DeltaView) -> Result<(f64, DeltaGrads)> {
    let n = previous.check()?;
    check_len(n, current.check()?, "temporal loss")?;
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    fn diff<const N: usize>(a: &[[f64; N]], b: &[[f64; N]], inv: f64, value: &mut f64) -> Vec<[f64; N]> {
        a.iter()
            .zip(b)
            .map(|(p, c)| {
                let mut g = [0.0; N];
                for k in 0..N {
                    let d = c[k] - p[k];
                    *value += d.abs();
                    g[k] = sign(d) * inv;
                }
                g
            })
            .collect()
    }
    let grads = DeltaGrads {
        position: diff(previous.position, current.position, inv, &mut value),
        rotation: diff(previous.rotation, current.rotation, inv, &mut value),
        scale: diff(previous.scale, current.scale, inv, &mut value),
    };
    Ok((value * inv, grads))
}

// ---------------------------------------------------------------------------
// the full objective

/// Everything the objective can see. Image terms are averaged over views;
/// absent optional inputs contribute 0.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub rendered: &'a [ImageBuffer],
    pub targets: &'a [&'a ImageBuffer],
    /// `(v_d, v_s)`
    pub geometry: Option<(&'a [Vec3], &'a [Vec3])>,
    /// `(M_p, M_r)`
    pub landmarks: Option<(&'a [Vec3], &'a [Vec3])>,
    /// `(s, δp, δr)`
    pub regularization: Option<(&'a [Vec3], &'a [Vec3], &'a [[f64; 4]])>,
    /// `(previous, current)`
    pub temporal: Option<(DeltaView<'a>, DeltaView<'a>)>,
}

/// Weighted gradients of the total objective.
#[derive(Debug, Clone, Default)]
pub struct ObjectiveGrads {
    pub images: Vec<ImageBuffer>,
    pub deformed: Option<Vec<Vec3>>,
    pub landmarks: Option<Vec<Vec3>>,
    /// w.r.t. activated scales
    pub scales: Option<Vec<Vec3>>,
    pub delta_position: Option<Vec<Vec3>>,
    pub delta_rotation: Option<Vec<[f64; 4]>>,
    pub delta_scale: Option<Vec<Vec3>>,
}

pub fn total_objective(inputs: &ObjectiveInputs, weights: &LossWeights) -> Result<LossReport> {
    objective(inputs, weights, false).map(|(r, _)| r)
}

pub fn total_objective_with_grads(
    inputs: &ObjectiveInputs,
    weights: &LossWeights,
) -> Result<(LossReport, ObjectiveGrads)> {
    objective(inputs, weights, true)
}

fn objective(
    inputs: &ObjectiveInputs,
    w: &LossWeights,
    want: bool,
) -> Result<(LossReport, ObjectiveGrads)> {
    w.validate()?;
    if inputs.rendered.len() != inputs.targets.len() {
        return Err(Error::invalid("rendered and target view counts differ"));
    }
    let mut r = LossReport::default();
    let mut g = ObjectiveGrads::default();
    let views = inputs.rendered.len();
    let per_view = if views > 0 { 1.0 / views as f64 } else { 0.0 };
    for (img, tgt) in inputs.rendered.iter().zip(inputs.targets) {
        let mut gi = ImageBuffer::new(img.width, img.height, img.channels);
        if want {
            let (l1, g1) = l1_with_grad(img, tgt)?;
            r.l1 += l1 * per_view;
            if w.ssim != 0.0 {
                let (s, gs) = ssim_with_grad(img, tgt)?;
                r.dssim += (1.0 - s) * per_view;
                for ((d, a), b) in gi.data.iter_mut().zip(&g1.data).zip(&gs.data) {
                    *d = per_view * (w.l1 * a - w.ssim * b);
                }
            } else {
                r.dssim += (1.0 - ssim(img, tgt)?) * per_view;
                for (d, a) in gi.data.iter_mut().zip(&g1.data) {
                    *d = per_view * w.l1 * a;
                }
            }
            g.images.push(gi);
        } else {
            r.l1 += l1_loss(img, tgt)? * per_view;
            r.dssim += (1.0 - ssim(img, tgt)?) * per_view;
        }
    }
    let scaled = |v: Vec<Vec3>, s: f64| -> Vec<Vec3> { v.into_iter().map(|x| x.map(|c| c * s)).collect() };
    if let Some((vd, vs)) = inputs.geometry {
        let (v, gr) = geo_with_grad(vd, vs)?;
        r.geo = v;
        if want {
            g.deformed = Some(scaled(gr, w.geo));
        }
    }
    if let Some((mp, mr)) = inputs.landmarks {
        let (v, gr) = lmk_with_grad(mp, mr)?;
        r.lmk = v;
        if want {
            g.landmarks = Some(scaled(gr, w.lmk));
        }
    }
    if let Some((s, dp, dr)) = inputs.regularization {
        let (v, gr) = reg_with_grad(s, dp, dr)?;
        r.reg = v;
        if want {
            g.scales = Some(scaled(gr.scale, w.reg));
            g.delta_position = Some(scaled(gr.position, w.reg));
            g.delta_rotation = Some(gr.rotation.into_iter().map(|x| x.map(|c| c * w.reg)).collect());
        }
    }
    if let Some((prev, cur)) = inputs.temporal {
        let (v, gr) = temp_with_grad(&prev, &cur)?;
        r.temp = v;
        if want {
            let add3 = |dst: &mut Option<Vec<Vec3>>, src: Vec<Vec3>| match dst {
                Some(d) => d.iter_mut().zip(&src).for_each(|(a, b)| (0..3).for_each(|k| a[k] += w.temp * b[k])),
                None => *dst = Some(scaled(src, w.temp)),
            };
            add3(&mut g.delta_position, gr.position);
            g.delta_scale = Some(scaled(gr.scale, w.temp));
            match &mut g.delta_rotation {
                Some(d) => d
                    .iter_mut()
                    .zip(&gr.rotation)
                    .for_each(|(a, b)| (0..4).for_each(|k| a[k] += w.temp * b[k])),
                None => g.delta_rotation = Some(gr.rotation.into_iter().map(|x| x.map(|c| c * w.temp)).collect()),
            }
        }
    }
    Ok((r.weighted(w), g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageBuffer {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        ImageBuffer::from_data(w, h, 3, data).unwrap()
    }

    #[test]
    fn l1_closed_forms() {
        let a = ImageBuffer::filled(4, 4, 3, 0.0);
        let b = ImageBuffer::filled(4, 4, 3, 1.0);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap(), 1.0);
        let check = img(4, 4, |x, y, _| ((x + y) % 2) as f64);
        let inv = img(4, 4, |x, y, _| 1.0 - ((x + y) % 2) as f64);
        assert_eq!(l1_loss(&check, &inv).unwrap(), 1.0);
        assert!(l1_loss(&a, &ImageBuffer::new(4, 3, 3)).is_err());
    }

    #[test]
    fn ssim_identity_and_constant_closed_form() {
        let a = img(16, 13, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let (p, q) = (0.3, 0.7);
        let ca = ImageBuffer::filled(12, 12, 3, p);
        let cb = ImageBuffer::filled(12, 12, 3, q);
        let expected = (2.0 * p * q + SSIM_C1) / (p * p + q * q + SSIM_C1);
        assert!((ssim(&ca, &cb).unwrap() - expected).abs() < 1e-9);
        assert!(ssim(&ImageBuffer::new(10, 20, 3), &ImageBuffer::new(10, 20, 3)).is_err());
    }

    #[test]
    fn geometric_landmark_temporal_closed_forms() {
        let vs = vec![[0.0; 3]; 10];
        let mut vd = vs.clone();
        assert_eq!(geo_loss(&vd, &vs).unwrap(), 0.0);
        vd[4] = [0.1, 0.0, 0.0];
        assert!((geo_loss(&vd, &vs).unwrap() - 0.001).abs() < 1e-15);

        let r = vec![[0.5, 0.1, 0.2]; 4];
        let mut p = r.clone();
        assert_eq!(lmk_loss(&p, &r).unwrap(), 0.0);
        p[2][1] += 0.02;
        assert!((lmk_loss(&p, &r).unwrap() - 0.005).abs() < 1e-12);
        assert!(lmk_loss(&p[..3], &r).is_err());

        let a = DeltaView { position: &[[0.0; 3]], rotation: &[[0.0; 4]], scale: &[[0.0; 3]] };
        assert_eq!(temp_loss(&a, &a).unwrap(), 0.0);
        let b = DeltaView { position: &[[0.01, 0.0, 0.0]], ..a };
        assert!((temp_loss(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn regularizer_hand_cases() {
        assert_eq!(reg_loss(&[[1.0; 3]; 5], &[[0.0; 3]; 5], &[[0.0; 4]; 5]).unwrap(), 3.0);
        assert_eq!(
            reg_loss(&[[1.0, 2.0, 3.0]], &[[0.1, 0.0, 0.0]], &[[0.0; 4]]).unwrap(),
            6.1
        );
    }

    #[test]
    fn weighted_total_bookkeeping() {
        let a = ImageBuffer::filled(12, 12, 3, 0.25);
        let b = ImageBuffer::filled(12, 12, 3, 0.75);
        let w = LossWeights::default();
        let rendered = [a.clone()];
        let targets = [&a];
        let inputs = ObjectiveInputs {
            rendered: &rendered,
            targets: &targets,
            geometry: None,
            landmarks: None,
            regularization: None,
            temporal: None,
        };
        assert_eq!(total_objective(&inputs, &w).unwrap().total, 0.0);
        let targets = [&b];
        let r = total_objective(&ObjectiveInputs { targets: &targets, ..inputs }, &w).unwrap();
        assert!((r.l1 - 0.5).abs() < 1e-15);
        assert!((r.total - (0.4 + 0.2 * r.dssim)).abs() < 1e-12);
    }
}

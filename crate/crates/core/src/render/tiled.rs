use rayon::prelude::*;

use super::{project_splats, GradientSet, ImageBuffer, RenderConfig, SplatRecord};
use crate::cloud::GaussianPrimitive;
use crate::error::{Error, Result};
use crate::math::{
    build_covariance, covariance_backward, jw_product, perspective_jacobian, Camera, Mat3,
};

/// Projected, depth-sorted and tile-binned splats for one camera.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub primitive_count: usize,
    /// Visible splats by ascending (depth, index).
    pub splats: Vec<SplatRecord>,
    /// `tile_lists[tile_offsets[t]..tile_offsets[t + 1]]` are positions in
    /// `splats` overlapping tile `t`, front to back.
    pub tile_offsets: Vec<usize>,
    pub tile_lists: Vec<u32>,
    cfg: RenderConfig,
}

pub(crate) fn project_stage(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &RenderConfig,
) -> Vec<Option<SplatRecord>> {
    if primitives.len() < 1024 {
        return project_splats(primitives, cam, cfg);
    }
    primitives
        .par_iter()
        .enumerate()
        .map(|(i, g)| super::project_splat(i, g, cam, cfg))
        .collect()
}

pub(crate) fn sort_stage(projected: Vec<Option<SplatRecord>>) -> Vec<SplatRecord> {
    let mut v: Vec<SplatRecord> = projected.into_iter().flatten().collect();
    v.par_sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    v
}

/// Inclusive tile rectangle `(x0, x1, y0, y1)` touched by a footprint.
fn tile_rect(s: &SplatRecord, w: usize, h: usize, ts: usize) -> Option<(usize, usize, usize, usize)> {
    let [mx, my] = s.mean;
    if !mx.is_finite() || !my.is_finite() {
        return None;
    }
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let (lo_x, hi_x) = ((mx - s.radius).ceil(), (mx + s.radius).floor());
    let (lo_y, hi_y) = ((my - s.radius).ceil(), (my + s.radius).floor());
    if hi_x < 0.0 || hi_y < 0.0 || lo_x > xmax || lo_y > ymax {
        return None;
    }
    let px0 = lo_x.max(0.0) as usize;
    let px1 = hi_x.min(xmax) as usize;
    let py0 = lo_y.max(0.0) as usize;
    let py1 = hi_y.min(ymax) as usize;
    Some((px0 / ts, px1 / ts, py0 / ts, py1 / ts))
}

pub(crate) fn bin_stage(
    splats: &[SplatRecord],
    w: usize,
    h: usize,
    ts: usize,
) -> (usize, usize, Vec<usize>, Vec<u32>) {
    let (tx, ty) = (w.div_ceil(ts), h.div_ceil(ts));
    let rects: Vec<_> = splats.iter().map(|s| tile_rect(s, w, h, ts)).collect();
    let mut counts = vec![0usize; tx * ty + 1];
    for r in rects.iter().flatten() {
        for y in r.2..=r.3 {
            for x in r.0..=r.1 {
                counts[y * tx + x + 1] += 1;
            }
        }
    }
    for t in 1..counts.len() {
        counts[t] += counts[t - 1];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut lists = vec![0u32; offsets[tx * ty]];
    for (k, r) in rects.iter().enumerate() {
        if let Some(r) = r {
            for y in r.2..=r.3 {
                for x in r.0..=r.1 {
                    let c = &mut cursor[y * tx + x];
                    lists[*c] = k as u32;
                    *c += 1;
                }
            }
        }
    }
    (tx, ty, offsets, lists)
}

impl PreparedFrame {
    pub fn new(primitives: &[GaussianPrimitive], cam: &Camera, cfg: &RenderConfig) -> Result<Self> {
        validate(cfg)?;
        let splats = sort_stage(project_stage(primitives, cam, cfg));
        Ok(Self::from_sorted(splats, primitives.len(), cam, cfg))
    }

    pub(crate) fn from_sorted(
        splats: Vec<SplatRecord>,
        primitive_count: usize,
        cam: &Camera,
        cfg: &RenderConfig,
    ) -> Self {
        let (tiles_x, tiles_y, tile_offsets, tile_lists) =
            bin_stage(&splats, cam.width, cam.height, cfg.tile_size);
        Self {
            width: cam.width,
            height: cam.height,
            tile_size: cfg.tile_size,
            tiles_x,
            tiles_y,
            primitive_count,
            splats,
            tile_offsets,
            tile_lists,
            cfg: *cfg,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    fn tile_list(&self, t: usize) -> &[u32] {
        &self.tile_lists[self.tile_offsets[t]..self.tile_offsets[t + 1]]
    }

    /// Pixel rectangle `(x0, x1, y0, y1)` of tile `t`, end-exclusive.
    fn tile_pixels(&self, t: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let ts = self.tile_size;
        (
            tx * ts,
            ((tx + 1) * ts).min(self.width),
            ty * ts,
            ((ty + 1) * ts).min(self.height),
        )
    }

    /// Front-to-back composite of one pixel; calls `visit(list_pos, alpha, t_before)`
    /// for every contribution. Returns the final transmittance.
    #[inline]
    fn walk_pixel(&self, list: &[u32], px: f64, py: f64, mut visit: impl FnMut(usize, f64, f64)) -> f64 {
        let mut t = 1.0;
        for (pos, &k) in list.iter().enumerate() {
            let s = &self.splats[k as usize];
            let power = s.conic.power(px - s.mean[0], py - s.mean[1]).min(0.0);
            let alpha = s.opacity * power.exp();
            if alpha < self.cfg.alpha_min {
                continue;
            }
            visit(pos, alpha, t);
            t *= 1.0 - alpha;
            if t < self.cfg.t_min {
                break;
            }
        }
        t
    }

    pub fn composite(&self) -> ImageBuffer {
        let ch = self.cfg.channels;
        let bg = self.cfg.background;
        let tiles: Vec<Vec<f64>> = (0..self.tile_count())
            .into_par_iter()
            .map(|t| {
                let (x0, x1, y0, y1) = self.tile_pixels(t);
                let list = self.tile_list(t);
                let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0) * ch);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let mut c = [0.0; 3];
                        let tf = self.walk_pixel(list, x as f64, y as f64, |pos, alpha, t| {
                            let col = self.splats[list[pos] as usize].color;
                            let w = alpha * t;
                            c[0] += col[0] * w;
                            c[1] += col[1] * w;
                            c[2] += col[2] * w;
                        });
                        for k in 0..3 {
                            out.push(c[k] + tf * bg[k]);
                        }
                        if ch == 4 {
                            out.push(1.0 - tf);
                        }
                    }
                }
                out
            })
            .collect();
        let mut img = ImageBuffer::new(self.width, self.height, ch);
        for (t, buf) in tiles.iter().enumerate() {
            let (x0, x1, y0, y1) = self.tile_pixels(t);
            let row = (x1 - x0) * ch;
            for y in y0..y1 {
                let dst = img.index(x0, y);
                let src = (y - y0) * row;
                img.data[dst..dst + row].copy_from_slice(&buf[src..src + row]);
            }
        }
        img
    }

    /// Gradients w.r.t. raw primitive parameters given `d_image = ∂L/∂image`.
    pub fn backward(
        &self,
        primitives: &[GaussianPrimitive],
        cam: &Camera,
        d_image: &ImageBuffer,
    ) -> Result<GradientSet> {
        let ch = self.cfg.channels;
        if d_image.width != self.width || d_image.height != self.height || d_image.channels != ch {
            return Err(Error::invalid("image gradient does not match the rendered frame"));
        }
        if primitives.len() != self.primitive_count {
            return Err(Error::invalid("primitive count changed since the frame was prepared"));
        }
        let bg = self.cfg.background;
        // per tile and list entry: [dmx, dmy, da, db, dc, dopacity, dr, dg, db]
        let partials: Vec<Vec<[f64; 9]>> = (0..self.tile_count())
            .into_par_iter()
            .map(|t| {
                let (x0, x1, y0, y1) = self.tile_pixels(t);
                let list = self.tile_list(t);
                let mut acc = vec![[0.0; 9]; list.len()];
                let mut contrib: Vec<(usize, f64, f64)> = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        let g = d_image.pixel(x, y);
                        if g.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let (px, py) = (x as f64, y as f64);
                        contrib.clear();
                        self.walk_pixel(list, px, py, |pos, alpha, tb| contrib.push((pos, alpha, tb)));
                        let mut rest = [bg[0], bg[1], bg[2], 0.0];
                        for &(pos, alpha, tb) in contrib.iter().rev() {
                            let s = &self.splats[list[pos] as usize];
                            let col = [s.color[0], s.color[1], s.color[2], 1.0];
                            let mut d_alpha = 0.0;
                            let e = &mut acc[pos];
                            for k in 0..ch {
                                d_alpha += g[k] * (col[k] - rest[k]);
                            }
                            d_alpha *= tb;
                            for k in 0..3 {
                                e[6 + k] += g[k] * alpha * tb;
                            }
                            for k in 0..4 {
                                rest[k] = alpha * col[k] + (1.0 - alpha) * rest[k];
                            }
                            let (dx, dy) = (px - s.mean[0], py - s.mean[1]);
                            let power = s.conic.power(dx, dy);
                            let d_power = if power < 0.0 { d_alpha * alpha } else { 0.0 };
                            e[5] += d_alpha * power.min(0.0).exp();
                            // ∂power/∂mean = Σ′⁻¹ d
                            e[0] += d_power * (s.conic.a * dx + s.conic.b * dy);
                            e[1] += d_power * (s.conic.b * dx + s.conic.c * dy);
                            e[2] += d_power * (-0.5 * dx * dx);
                            e[3] += d_power * (-dx * dy);
                            e[4] += d_power * (-0.5 * dy * dy);
                        }
                    }
                }
                acc
            })
            .collect();

        let mut per_splat = vec![[0.0; 9]; self.splats.len()];
        for (t, acc) in partials.iter().enumerate() {
            for (&k, e) in self.tile_list(t).iter().zip(acc) {
                let d = &mut per_splat[k as usize];
                for m in 0..9 {
                    d[m] += e[m];
                }
            }
        }

        let mut out = GradientSet::zeros(primitives.len());
        let results: Vec<Result<PrimitiveGrad>> = self
            .splats
            .par_iter()
            .zip(&per_splat)
            .map(|(s, d)| splat_to_primitive(s, d, &primitives[s.index as usize], cam))
            .collect();
        for r in results {
            let (i, dp, dq, ds, dop, dc) = r?;
            out.position[i] = dp;
            out.rotation[i] = dq;
            out.scale[i] = ds;
            out.opacity[i] = dop;
            out.color[i] = dc;
        }
        Ok(out)
    }
}

type PrimitiveGrad = (usize, [f64; 3], [f64; 4], [f64; 3], f64, [f64; 3]);

/// Chains screen-space gradients of one splat back to raw primitive parameters.
fn splat_to_primitive(
    s: &SplatRecord,
    d: &[f64; 9],
    g: &GaussianPrimitive,
    cam: &Camera,
) -> Result<PrimitiveGrad> {
    let i = s.index as usize;
    let w = &cam.world_to_camera.rotation;
    let t = cam.to_camera(g.position);
    let j = perspective_jacobian(cam, t).ok_or_else(|| Error::invalid("splat behind the camera"))?;
    let tm = jw_product(&j, w);
    let cov3 = build_covariance(g.rotation, g.scale)?.to_mat();

    // conic -> Σ′: dΣ′ = -A·G_A·A
    let a = [[s.conic.a, s.conic.b], [s.conic.b, s.conic.c]];
    let ga = [[d[2], 0.5 * d[3]], [0.5 * d[3], d[4]]];
    let mut ag = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            ag[r][c] = a[r][0] * ga[0][c] + a[r][1] * ga[1][c];
        }
    }
    let mut gp = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            gp[r][c] = -(ag[r][0] * a[0][c] + ag[r][1] * a[1][c]);
        }
    }

    // Σ′ = T·Σ·Tᵀ: dΣ = Tᵀ·G′·T, dT = 2·G′·T·Σ
    let mut d_cov = Mat3::ZERO;
    for p in 0..3 {
        for q in 0..3 {
            let mut v = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    v += tm[r][p] * gp[r][c] * tm[c][q];
                }
            }
            d_cov.0[p][q] = v;
        }
    }
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = (0..3).map(|k| tm[r][k] * cov3.0[k][c]).sum();
        }
    }
    let mut d_t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_t[r][c] = 2.0 * (gp[r][0] * ts[0][c] + gp[r][1] * ts[1][c]);
        }
    }
    // T = J·W: dJ = dT·Wᵀ
    let mut d_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_j[r][c] = (0..3).map(|k| d_t[r][k] * w.0[c][k]).sum();
        }
    }

    let (x, y, z) = (t[0], t[1], t[2]);
    let (iz, iz2) = (1.0 / z, 1.0 / (z * z));
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let (dmx, dmy) = (d[0], d[1]);
    let mut dt = [
        dmx * fx * iz,
        dmy * fy * iz,
        -dmx * fx * x * iz2 - dmy * fy * y * iz2,
    ];
    dt[0] += d_j[0][2] * (-fx * iz2);
    dt[1] += d_j[1][2] * (-fy * iz2);
    dt[2] += d_j[0][0] * (-fx * iz2)
        + d_j[0][2] * (2.0 * fx * x * iz3)
        + d_j[1][1] * (-fy * iz2)
        + d_j[1][2] * (2.0 * fy * y * iz3);
    let dp = w.transpose().mul_vec(dt);

    let (dq, ds_act) = covariance_backward(g.rotation, g.scale, &d_cov)?;
    let ds = [0, 1, 2].map(|k| ds_act[k] * -(-g.scale[k]).exp_m1());
    let dop = d[5] * g.opacity * (1.0 - g.opacity);
    let dc = [0, 1, 2].map(|k| d[6 + k] * g.color[k] * (1.0 - g.color[k]));
    Ok((i, dp, dq, ds, dop, dc))
}

fn validate(cfg: &RenderConfig) -> Result<()> {
    if cfg.tile_size == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    if cfg.channels != 3 && cfg.channels != 4 {
        return Err(Error::invalid("render channels must be 3 or 4"));
    }
    if !(cfg.alpha_min >= 0.0 && cfg.alpha_min < 1.0) || !(cfg.t_min >= 0.0) || !(cfg.dilation >= 0.0) {
        return Err(Error::invalid("render thresholds out of range"));
    }
    Ok(())
}

/// Tile-binned renderer with early termination at `t_min`.
pub fn render_tiled(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<ImageBuffer> {
    Ok(PreparedFrame::new(primitives, cam, cfg)?.composite())
}

/// Analytic gradient of `Σ d_image · render_tiled(...)` w.r.t. raw primitive parameters.
pub fn render_backward(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &RenderConfig,
    d_image: &ImageBuffer,
) -> Result<GradientSet> {
    PreparedFrame::new(primitives, cam, cfg)?.backward(primitives, cam, d_image)
}

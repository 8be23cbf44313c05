use rayon::prelude::*;

use super::{depth_order, project_splats, ImageBuffer, RenderConfig};
use crate::cloud::GaussianPrimitive;
use crate::math::Camera;

/// Brute-force renderer: every visible gaussian is evaluated at every pixel
/// and composited in depth order, with no footprint bound and no early exit.
pub fn render_reference(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    cfg: &RenderConfig,
) -> ImageBuffer {
    let ordered = depth_order(&project_splats(primitives, cam, cfg));
    let (w, h, ch) = (cam.width, cam.height, cfg.channels);
    let mut img = ImageBuffer::new(w, h, ch);
    img.data
        .par_chunks_mut(w * ch)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let mut t = 1.0;
                let mut c = [0.0; 3];
                for s in &ordered {
                    let power = s.conic.power(px - s.mean[0], py - s.mean[1]).min(0.0);
                    let alpha = s.opacity * power.exp();
                    if alpha < cfg.alpha_min {
                        continue;
                    }
                    for k in 0..3 {
                        c[k] += s.color[k] * alpha * t;
                    }
                    t *= 1.0 - alpha;
                }
                let out = &mut row[x * ch..(x + 1) * ch];
                for k in 0..3 {
                    out[k] = c[k] + t * cfg.background[k];
                }
                if ch == 4 {
                    out[3] = 1.0 - t;
                }
            }
        });
    img
}

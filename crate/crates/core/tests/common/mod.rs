#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use splat_avatar::cloud::GaussianPrimitive;
use splat_avatar::math::{Camera, Quaternion};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_quaternion(rng: &mut impl Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(normal(rng), normal(rng), normal(rng), normal(rng));
        if q.norm() > 0.1 {
            return q.normalized().unwrap();
        }
    }
}

/// Camera orbiting the origin at distance 3 with a random view direction.
pub fn random_camera(rng: &mut impl Rng, w: usize, h: usize) -> Camera {
    loop {
        let d = [normal(rng), normal(rng), normal(rng)];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n < 0.1 || (d[1] / n).abs() > 0.95 {
            continue;
        }
        let eye = d.map(|v| 3.0 * v / n);
        let target = [0.0; 3].map(|_| rng.random_range(-0.1..0.1));
        let focal = rng.random_range(0.9..1.4) * w as f64;
        return Camera::look_at(w, h, focal, eye, target, [0.0, 1.0, 0.0]).unwrap();
    }
}

/// `n` gaussians inside the unit cube, footprints of a few to tens of pixels.
pub fn random_primitives(rng: &mut impl Rng, n: usize, scale: (f64, f64)) -> Vec<GaussianPrimitive> {
    (0..n)
        .map(|_| GaussianPrimitive {
            position: [0; 3].map(|_| rng.random_range(-0.8..0.8)),
            rotation: random_quaternion(rng),
            scale: [0; 3].map(|_| rng.random_range(scale.0..scale.1)),
            opacity: rng.random_range(0.05..0.98),
            color: [0; 3].map(|_| rng.random_range(0.02..0.98)),
        })
        .collect()
}

pub fn random_scene(
    rng: &mut impl Rng,
    n: usize,
    w: usize,
    h: usize,
) -> (Vec<GaussianPrimitive>, Camera) {
    let cam = random_camera(rng, w, h);
    (random_primitives(rng, n, (0.005, 0.08)), cam)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

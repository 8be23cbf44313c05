//! Procedural head-like template: a lat-long shell around an ellipsoid with a
//! nose, brow and eye sockets, a crown vertex and an open neck.
//!
//! `head_mesh(62, 81)` has 5023 vertices, matching the reference topology
//! size; small ring counts give the low-poly fixtures used for fitting.

use std::f64::consts::PI;

use super::TemplateMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

const RADII: Vec3 = [0.075, 0.1, 0.09];
const THETA_TOP: f64 = 0.12 * PI;
const THETA_BOTTOM: f64 = 0.8 * PI;
const U_RANGE: (f64, f64) = (0.02, 0.98);
const V_RANGE: (f64, f64) = (0.06, 0.98);
const V_CROWN: f64 = 0.02;

fn wrap(phi: f64) -> f64 {
    let mut p = phi % (2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

fn bump(phi: f64, theta: f64, phi0: f64, theta0: f64, wp: f64, wt: f64) -> f64 {
    let dp = wrap(phi - phi0);
    let dt = theta - theta0;
    (-(dp * dp / wp + dt * dt / wt)).exp()
}

fn surface(theta: f64, phi: f64) -> Vec3 {
    let radial = 1.0 + 0.22 * bump(phi, theta, 0.0, 0.56 * PI, 0.02, 0.012)
        + 0.06 * bump(phi, theta, 0.0, 0.36 * PI, 0.25, 0.004)
        - 0.05 * bump(phi, theta, 0.33, 0.43 * PI, 0.012, 0.004)
        - 0.05 * bump(phi, theta, -0.33, 0.43 * PI, 0.012, 0.004)
        + 0.04 * bump(phi, theta, 0.0, 0.72 * PI, 0.05, 0.01);
    let d = [theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos()];
    [
        RADII[0] * d[0] * radial,
        RADII[1] * d[1] * radial,
        RADII[2] * d[2] * radial,
    ]
}

fn ring_theta(r: usize, rings: usize) -> f64 {
    THETA_TOP + (THETA_BOTTOM - THETA_TOP) * r as f64 / (rings - 1) as f64
}

/// Head-like shell with `rings × segments + 1` vertices and four rigid
/// landmarks (two per eye).
pub fn head_mesh(rings: usize, segments: usize) -> Result<TemplateMesh> {
    if rings < 2 || segments < 3 {
        return Err(Error::invalid("head mesh needs at least 2 rings and 3 segments"));
    }
    let idx = |r: usize, j: usize| r * segments + (j % segments);
    let crown = rings * segments;

    let mut vertices = Vec::with_capacity(crown + 1);
    for r in 0..rings {
        let theta = ring_theta(r, rings);
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            vertices.push(surface(theta, phi));
        }
    }
    vertices.push([0.0, RADII[1], 0.0]);

    let u = |j: usize| U_RANGE.0 + (U_RANGE.1 - U_RANGE.0) * j as f64 / segments as f64;
    let v = |r: usize| V_RANGE.0 + (V_RANGE.1 - V_RANGE.0) * r as f64 / (rings - 1) as f64;

    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    for j in 0..segments {
        faces.push([crown, idx(0, j), idx(0, j + 1)]);
        face_uvs.push([
            [0.5 * (u(j) + u(j + 1)), V_CROWN],
            [u(j), v(0)],
            [u(j + 1), v(0)],
        ]);
    }
    for r in 0..rings - 1 {
        for j in 0..segments {
            let (a, b, c, d) = (idx(r, j), idx(r, j + 1), idx(r + 1, j + 1), idx(r + 1, j));
            let (ua, ub, uc, ud) = (
                [u(j), v(r)],
                [u(j + 1), v(r)],
                [u(j + 1), v(r + 1)],
                [u(j), v(r + 1)],
            );
            faces.push([a, d, c]);
            face_uvs.push([ua, ud, uc]);
            faces.push([a, c, b]);
            face_uvs.push([ua, uc, ub]);
        }
    }

    let nearest = |theta: f64, phi: f64| -> usize {
        let r = (((theta - THETA_TOP) / (THETA_BOTTOM - THETA_TOP)) * (rings - 1) as f64)
            .round()
            .clamp(0.0, (rings - 1) as f64) as usize;
        let j = (phi.rem_euclid(2.0 * PI) / (2.0 * PI) * segments as f64).round() as usize;
        idx(r, j)
    };
    let eye = 0.43 * PI;
    let landmarks = vec![
        nearest(eye, 0.2),
        nearest(eye + 0.05 * PI, 0.55),
        nearest(eye, -0.2),
        nearest(eye + 0.05 * PI, -0.55),
    ];

    TemplateMesh::new(vertices, faces, face_uvs, landmarks)
}

/// The 5023-vertex fixture.
pub fn reference_head() -> TemplateMesh {
    head_mesh(62, 81).expect("fixed parameters are valid")
}

/// Low-poly fixture used by the fitting tests.
pub fn low_poly_head() -> TemplateMesh {
    head_mesh(10, 16).expect("fixed parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{norm3, sub3};

    #[test]
    fn reference_fixture_size() {
        let m = reference_head();
        assert_eq!(m.vertex_count(), 5023);
        assert_eq!(m.landmarks.len(), 4);
        assert_eq!(m.faces.len(), m.face_uvs.len());
    }

    #[test]
    fn landmarks_are_distinct_and_not_collinear() {
        for m in [low_poly_head(), reference_head()] {
            let l: Vec<Vec3> = m.landmarks.iter().map(|&i| m.vertices[i]).collect();
            let mut ids = m.landmarks.clone();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 4);
            let n = crate::math::cross3(sub3(l[1], l[0]), sub3(l[2], l[0]));
            let off = crate::math::dot3(n, sub3(l[3], l[0])).abs();
            assert!(norm3(n) > 1e-5 || off > 1e-7);
        }
    }
}

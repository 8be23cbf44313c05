//! Rotation algebra, covariance construction and EWA screen-space projection.
//!
//! Everything here is a pure function of plain `f64` values. The backward
//! helpers at the bottom of the file are the adjoints of the forward maps and
//! are used by the rasterizer and the mesh pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Vec2 = [f64; 2];

/// Camera-space depth below which a gaussian is culled.
pub const NEAR_PLANE: f64 = 1e-4;

/// Default low-pass dilation added to both diagonal entries of a projected covariance (px²).
pub const DEFAULT_DILATION: f64 = 0.3;

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; `y` must be positive.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of softplus expressed through its output: `sigmoid(x) = 1 - e^{-softplus(x)}`.
#[inline]
pub fn softplus_grad_from_output(y: f64) -> f64 {
    -(-y).exp_m1()
}

/// Scalar-first quaternion `(w, x, y, z)`. Not necessarily unit length;
/// normalization happens where a rotation is needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Unit quaternion rotating by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = norm3(axis);
        if !(n > 0.0) {
            return Err(Error::invalid("rotation axis has zero length"));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = scale3(axis, s / n);
        Ok(Self::new(c, a[0], a[1], a[2]))
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("quaternion has zero or non-finite norm"));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotation angle in radians of the normalized quaternion, in `[0, π]`.
    pub fn angle(self) -> Result<f64> {
        let q = self.normalized()?;
        let v = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        Ok(2.0 * v.atan2(q.w.abs()))
    }
}

/// Rotation matrix of the normalized quaternion.
pub fn quat_to_rotation(q: Quaternion) -> Result<Mat3> {
    let q = q.normalized()?;
    Ok(unit_quat_to_rotation(q))
}

fn unit_quat_to_rotation(q: Quaternion) -> Mat3 {
    let Quaternion { w, x, y, z } = q;
    Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn diag(d: Vec3) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, rhs: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        dot3(m[0], cross3(m[1], m[2]))
    }

    pub fn add(&self, rhs: &Mat3) -> Mat3 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += rhs.0[i][j];
            }
        }
        Mat3(out)
    }

    pub fn max_abs_diff(&self, rhs: &Mat3) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - rhs.0[i][j]).abs());
            }
        }
        d
    }
}

/// Symmetric 3×3 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl Covariance3 {
    pub const ZERO: Covariance3 = Covariance3 {
        xx: 0.0,
        xy: 0.0,
        xz: 0.0,
        yy: 0.0,
        yz: 0.0,
        zz: 0.0,
    };

    /// Symmetrizes `m` (averaging off-diagonal pairs).
    pub fn from_mat(m: &Mat3) -> Self {
        let m = &m.0;
        Self {
            xx: m[0][0],
            xy: 0.5 * (m[0][1] + m[1][0]),
            xz: 0.5 * (m[0][2] + m[2][0]),
            yy: m[1][1],
            yz: 0.5 * (m[1][2] + m[2][1]),
            zz: m[2][2],
        }
    }

    pub fn to_mat(&self) -> Mat3 {
        Mat3([
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            xx: self.xx * s,
            xy: self.xy * s,
            xz: self.xz * s,
            yy: self.yy * s,
            yz: self.yz * s,
            zz: self.zz * s,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            xz: self.xz + o.xz,
            yy: self.yy + o.yy,
            yz: self.yz + o.yz,
            zz: self.zz + o.zz,
        }
    }
}

/// `R·diag(s)²·Rᵀ` for the rotation of `q` and per-axis scales `s`.
pub fn build_covariance(q: Quaternion, s: Vec3) -> Result<Covariance3> {
    if !s.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("scales must be positive, got {s:?}")));
    }
    let r = quat_to_rotation(q)?;
    Ok(covariance_from_rotation(&r, s))
}

fn covariance_from_rotation(r: &Mat3, s: Vec3) -> Covariance3 {
    let mut m = r.0;
    for row in m.iter_mut() {
        for j in 0..3 {
            row[j] *= s[j];
        }
    }
    let m = Mat3(m);
    Covariance3::from_mat(&m.mul(&m.transpose()))
}

/// Symmetric 2×2 covariance in pixel² units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Covariance2 {
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues, larger first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mid = 0.5 * (self.xx + self.yy);
        let disc = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (mid + disc, mid - disc)
    }

    pub fn inverse(&self) -> Option<Conic> {
        let det = self.det();
        if !(det > 0.0) {
            return None;
        }
        let inv = 1.0 / det;
        Some(Conic {
            a: self.yy * inv,
            b: -self.xy * inv,
            c: self.xx * inv,
        })
    }
}

/// Inverse 2D covariance `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Conic {
    /// Exponent `-½ dᵀ Σ⁻¹ d` of the gaussian at pixel offset `d`.
    #[inline]
    pub fn power(&self, dx: f64, dy: f64) -> f64 {
        -0.5 * (self.a * dx * dx + self.c * dy * dy) - self.b * dx * dy
    }
}

/// `exp(-½ dᵀ Σ′⁻¹ d)`. Returns 0 when `cov` is singular.
pub fn gaussian_density_2d(cov: &Covariance2, d: Vec2) -> f64 {
    match cov.inverse() {
        Some(conic) => conic.power(d[0], d[1]).min(0.0).exp(),
        None => 0.0,
    }
}

/// Rotation plus translation, `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add3(self.rotation.mul_vec(p), self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: scale3(rt.mul_vec(self.translation), -1.0),
        }
    }
}

/// Pinhole camera; camera looks down +z, image y grows downward. Pixel
/// `(i, j)` is centered at coordinates `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: RigidTransform,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: RigidTransform,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera dimensions must be nonzero"));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        let r = &world_to_camera.rotation;
        let rtr = r.transpose().mul(r);
        if rtr.max_abs_diff(&Mat3::IDENTITY) > 1e-6 || (r.det() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("world_to_camera rotation is not in SO(3)"));
        }
        Ok(Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
        })
    }

    /// Camera at `eye` looking at `target`, with world `up` mapping to image-up.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Result<Self> {
        let forward = sub3(target, eye);
        let fz = norm3(forward);
        if !(fz > 0.0) {
            return Err(Error::invalid("look_at eye and target coincide"));
        }
        let z = scale3(forward, 1.0 / fz);
        // image y points down: x = z × up, y = z × x
        let xr = cross3(z, up);
        let xn = norm3(xr);
        if !(xn > 1e-12) {
            return Err(Error::invalid("look_at up vector is parallel to the view direction"));
        }
        let x = scale3(xr, 1.0 / xn);
        let y = cross3(z, x);
        let rotation = Mat3([x, y, z]);
        let translation = scale3(rotation.mul_vec(eye), -1.0);
        Self::new(
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            RigidTransform {
                rotation,
                translation,
            },
        )
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.world_to_camera.apply(p)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.world_to_camera.inverse().translation
    }

    /// Exact pinhole projection of a camera-space point.
    pub fn project_camera_point(&self, t: Vec3) -> Vec2 {
        [self.fx * t[0] / t[2] + self.cx, self.fy * t[1] / t[2] + self.cy]
    }
}

/// 2×3 Jacobian of the pinhole projection at camera-space point `t`, or
/// `None` when the point lies at or behind the near plane.
pub fn perspective_jacobian(cam: &Camera, t: Vec3) -> Option<[[f64; 3]; 2]> {
    let z = t[2];
    if !(z > NEAR_PLANE) {
        return None;
    }
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    Some([
        [cam.fx * iz, 0.0, -cam.fx * t[0] * iz2],
        [0.0, cam.fy * iz, -cam.fy * t[1] * iz2],
    ])
}

/// EWA projection `J·W·Σ·Wᵀ·Jᵀ + dilation·I`; `None` when culled by the near plane.
pub fn project_covariance(
    cov: &Covariance3,
    cam: &Camera,
    mean_world: Vec3,
    dilation: f64,
) -> Option<Covariance2> {
    let t = cam.to_camera(mean_world);
    let j = perspective_jacobian(cam, t)?;
    let tm = jw_product(&j, &cam.world_to_camera.rotation);
    Some(project_with(&tm, cov, dilation))
}

/// `T = J·W` (2×3).
pub(crate) fn jw_product(j: &[[f64; 3]; 2], w: &Mat3) -> [[f64; 3]; 2] {
    let mut t = [[0.0; 3]; 2];
    for (r, row) in t.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| j[r][k] * w.0[k][c]).sum();
        }
    }
    t
}

pub(crate) fn project_with(t: &[[f64; 3]; 2], cov: &Covariance3, dilation: f64) -> Covariance2 {
    let s = cov.to_mat();
    // rows of T·Σ
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = (0..3).map(|k| t[r][k] * s.0[k][c]).sum();
        }
    }
    Covariance2 {
        xx: dot3(ts[0], t[0]) + dilation,
        xy: dot3(ts[0], t[1]),
        yy: dot3(ts[1], t[1]) + dilation,
    }
}

// ---------------------------------------------------------------------------
// Adjoints

/// Gradient of a scalar w.r.t. the raw (un-normalized) quaternion `q`, given
/// the gradient `d_rot` w.r.t. the rotation matrix of `q / |q|`.
pub fn rotation_backward(q: Quaternion, d_rot: &Mat3) -> Result<[f64; 4]> {
    let n = q.norm();
    let u = q.normalized()?;
    let Quaternion { w, x, y, z } = u;
    let g = &d_rot.0;
    let dw = Mat3([
        [0.0, -2.0 * z, 2.0 * y],
        [2.0 * z, 0.0, -2.0 * x],
        [-2.0 * y, 2.0 * x, 0.0],
    ]);
    let dx = Mat3([
        [0.0, 2.0 * y, 2.0 * z],
        [2.0 * y, -4.0 * x, -2.0 * w],
        [2.0 * z, 2.0 * w, -4.0 * x],
    ]);
    let dy = Mat3([
        [-4.0 * y, 2.0 * x, 2.0 * w],
        [2.0 * x, 0.0, 2.0 * z],
        [-2.0 * w, 2.0 * z, -4.0 * y],
    ]);
    let dz = Mat3([
        [-4.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * w, -4.0 * z, 2.0 * y],
        [2.0 * x, 2.0 * y, 0.0],
    ]);
    let contract = |m: &Mat3| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += g[i][j] * m.0[i][j];
            }
        }
        s
    };
    let gu = [contract(&dw), contract(&dx), contract(&dy), contract(&dz)];
    let ua = u.to_array();
    let proj: f64 = (0..4).map(|k| gu[k] * ua[k]).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (gu[k] - proj * ua[k]) / n;
    }
    Ok(out)
}

/// Adjoint of [`build_covariance`]: given `d_cov` (full symmetric gradient
/// w.r.t. Σ), returns gradients w.r.t. the raw quaternion and the scales.
pub fn covariance_backward(q: Quaternion, s: Vec3, d_cov: &Mat3) -> Result<([f64; 4], Vec3)> {
    let r = quat_to_rotation(q)?;
    // Σ = M·Mᵀ with M = R·diag(s); dL/dM = (G + Gᵀ)·M
    let gs = d_cov.add(&d_cov.transpose());
    let mut m = r.0;
    for row in m.iter_mut() {
        for j in 0..3 {
            row[j] *= s[j];
        }
    }
    let dm = gs.mul(&Mat3(m));
    let mut ds = [0.0; 3];
    let mut dr = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ds[j] += dm.0[i][j] * r.0[i][j];
            dr[i][j] = dm.0[i][j] * s[j];
        }
    }
    let dq = rotation_backward(q, &Mat3(dr))?;
    Ok((dq, ds))
}

//! Gaussian initialization on the posed mesh, fine-step deltas and the
//! appearance grids, plus the differentiable avatar pipeline that ties the
//! mesh stage to the primitives.

mod knn;
pub mod snapshot;

use std::borrow::Cow;

pub use knn::mean_knn_distance;

use crate::error::{Error, Result};
use crate::math::{
    add3, inverse_softplus, logit, quat_to_rotation, rotation_backward, sigmoid, softplus,
    softplus_grad_from_output, Mat3, Quaternion, Vec3,
};
use crate::mesh::{
    apply_rigid_pose, apply_vertex_offsets, sample_positions, DeformedMesh, RigidPose,
    TemplateMesh, Texel, UvSampleTable,
};
use crate::render::GradientSet;

/// Neighbours averaged by the isotropic scale initialization.
pub const SCALE_NEIGHBORS: usize = 3;

/// Lower bound on an initial scale, for texels that collapse onto one point.
const MIN_INIT_SCALE: f64 = 1e-6;

/// One anisotropic 3D gaussian in activated (renderable) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vec3,
    pub rotation: Quaternion,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl GaussianPrimitive {
    /// Builds a primitive from raw (pre-activation) values.
    pub fn from_raw(
        position: Vec3,
        rotation: Quaternion,
        scale_raw: Vec3,
        opacity_raw: f64,
        color_raw: [f64; 3],
    ) -> Self {
        Self {
            position,
            rotation,
            scale: scale_raw.map(softplus),
            opacity: sigmoid(opacity_raw),
            color: color_raw.map(sigmoid),
        }
    }

    /// Raw values `(scale_raw, opacity_raw, color_raw)` that reproduce this primitive.
    pub fn raw_appearance(&self) -> (Vec3, f64, [f64; 3]) {
        (
            self.scale.map(inverse_softplus),
            logit(self.opacity),
            self.color.map(logit),
        )
    }
}

/// Per-gaussian initialization: `p_in`, `r_in`, `s_in` and the source texel.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudInit {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quaternion>,
    pub scales: Vec<Vec3>,
    pub sources: Vec<(u32, [f64; 3])>,
}

impl CloudInit {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Isotropic initial scale of each valid texel sample on `posed`.
pub fn initial_scales(table: &UvSampleTable, posed: &DeformedMesh, k: usize) -> Result<Vec<f64>> {
    let positions = sample_positions(table, posed);
    if positions.len() <= k {
        return Err(Error::invalid(format!(
            "{} valid texels; scale initialization needs more than {k}",
            positions.len()
        )));
    }
    Ok(mean_knn_distance(&positions, k)
        .into_iter()
        .map(|d| d.max(MIN_INIT_SCALE))
        .collect())
}

/// Places one gaussian per valid texel on `posed`, identity rotation and
/// mean-k-NN isotropic scale.
pub fn initialize_cloud(table: &UvSampleTable, posed: &DeformedMesh) -> Result<CloudInit> {
    let scales = initial_scales(table, posed, SCALE_NEIGHBORS)?;
    Ok(cloud_from_scales(table, posed, &scales))
}

fn cloud_from_scales(table: &UvSampleTable, posed: &DeformedMesh, scales: &[f64]) -> CloudInit {
    let positions = sample_positions(table, posed);
    let n = positions.len();
    CloudInit {
        positions,
        rotations: vec![Quaternion::IDENTITY; n],
        scales: scales.iter().map(|&s| [s; 3]).collect(),
        sources: table.valid_texels().map(|t| (t.face, t.bary)).collect(),
    }
}

/// Parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    VertexOffsets,
    PoseRotation,
    PoseTranslation,
    DeltaPosition,
    DeltaRotation,
    DeltaScale,
    Opacity,
    Color,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::VertexOffsets,
        ParamGroup::PoseRotation,
        ParamGroup::PoseTranslation,
        ParamGroup::DeltaPosition,
        ParamGroup::DeltaRotation,
        ParamGroup::DeltaScale,
        ParamGroup::Opacity,
        ParamGroup::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::VertexOffsets => "vertex_offsets",
            ParamGroup::PoseRotation => "pose_rotation",
            ParamGroup::PoseTranslation => "pose_translation",
            ParamGroup::DeltaPosition => "delta_position",
            ParamGroup::DeltaRotation => "delta_rotation",
            ParamGroup::DeltaScale => "delta_scale",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Color => "color",
        }
    }
}

/// Per-frame optimizable state. All values are raw (pre-activation).
///
/// The same layout doubles as the gradient container, where `pose.rotation`
/// holds the gradient w.r.t. the raw quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct AvatarParams {
    pub vertex_offsets: Vec<Vec3>,
    pub pose: RigidPose,
    pub delta_position: Vec<Vec3>,
    pub delta_rotation: Vec<[f64; 4]>,
    pub delta_scale: Vec<Vec3>,
    pub opacity: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl AvatarParams {
    /// Zero offsets and deltas, identity pose, raw opacity and color 0.
    pub fn zeros(vertices: usize, gaussians: usize) -> Self {
        Self {
            vertex_offsets: vec![[0.0; 3]; vertices],
            pose: RigidPose::IDENTITY,
            delta_position: vec![[0.0; 3]; gaussians],
            delta_rotation: vec![[0.0; 4]; gaussians],
            delta_scale: vec![[0.0; 3]; gaussians],
            opacity: vec![0.0; gaussians],
            color: vec![[0.0; 3]; gaussians],
        }
    }

    /// Same shape as `self`, all zeros, with a zero pose (gradient layout).
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.vertex_offsets.len(), self.gaussian_count());
        z.pose = RigidPose {
            rotation: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            translation: [0.0; 3],
        };
        z
    }

    pub fn gaussian_count(&self) -> usize {
        self.delta_position.len()
    }

    fn check_gaussian_count(&self, n: usize) -> Result<()> {
        let counts = [
            ("delta_position", self.delta_position.len()),
            ("delta_rotation", self.delta_rotation.len()),
            ("delta_scale", self.delta_scale.len()),
            ("opacity", self.opacity.len()),
            ("color", self.color.len()),
        ];
        for (name, len) in counts {
            if len != n {
                return Err(Error::invalid(format!(
                    "{name} grid has {len} entries for {n} gaussians"
                )));
            }
        }
        Ok(())
    }

    pub fn group_values(&self, g: ParamGroup) -> Cow<'_, [f64]> {
        match g {
            ParamGroup::VertexOffsets => Cow::Borrowed(self.vertex_offsets.as_flattened()),
            ParamGroup::PoseRotation => Cow::Owned(self.pose.rotation.to_array().to_vec()),
            ParamGroup::PoseTranslation => Cow::Borrowed(&self.pose.translation),
            ParamGroup::DeltaPosition => Cow::Borrowed(self.delta_position.as_flattened()),
            ParamGroup::DeltaRotation => Cow::Borrowed(self.delta_rotation.as_flattened()),
            ParamGroup::DeltaScale => Cow::Borrowed(self.delta_scale.as_flattened()),
            ParamGroup::Opacity => Cow::Borrowed(&self.opacity),
            ParamGroup::Color => Cow::Borrowed(self.color.as_flattened()),
        }
    }

    /// Runs `f` over the flattened values of one group.
    pub fn with_group_mut<R>(&mut self, g: ParamGroup, f: impl FnOnce(&mut [f64]) -> R) -> R {
        match g {
            ParamGroup::VertexOffsets => f(self.vertex_offsets.as_flattened_mut()),
            ParamGroup::PoseRotation => {
                let mut q = self.pose.rotation.to_array();
                let r = f(&mut q);
                self.pose.rotation = Quaternion::from_array(q);
                r
            }
            ParamGroup::PoseTranslation => f(&mut self.pose.translation),
            ParamGroup::DeltaPosition => f(self.delta_position.as_flattened_mut()),
            ParamGroup::DeltaRotation => f(self.delta_rotation.as_flattened_mut()),
            ParamGroup::DeltaScale => f(self.delta_scale.as_flattened_mut()),
            ParamGroup::Opacity => f(&mut self.opacity),
            ParamGroup::Color => f(self.color.as_flattened_mut()),
        }
    }
}

/// `p = p_in + δp`, `r = normalize(r_in + δr)`, `s = softplus(softplus⁻¹(s_in) + δs)`,
/// `o = σ(O)`, `c = σ(C)`.
pub fn apply_deltas(init: &CloudInit, params: &AvatarParams) -> Result<Vec<GaussianPrimitive>> {
    params.check_gaussian_count(init.len())?;
    (0..init.len())
        .map(|i| {
            let r = init.rotations[i].to_array();
            let d = params.delta_rotation[i];
            let rotation =
                Quaternion::new(r[0] + d[0], r[1] + d[1], r[2] + d[2], r[3] + d[3]).normalized()?;
            let s_in = init.scales[i];
            let ds = params.delta_scale[i];
            Ok(GaussianPrimitive {
                position: add3(init.positions[i], params.delta_position[i]),
                rotation,
                scale: [0, 1, 2].map(|k| softplus(inverse_softplus(s_in[k]) + ds[k])),
                opacity: sigmoid(params.opacity[i]),
                color: params.color[i].map(sigmoid),
            })
        })
        .collect()
}

/// Intermediate values of one avatar evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AvatarState {
    pub deformed: DeformedMesh,
    pub posed: DeformedMesh,
    pub init: CloudInit,
    pub primitives: Vec<GaussianPrimitive>,
}

/// Extra gradients entering the avatar pipeline besides the rasterizer's.
#[derive(Debug, Clone, Default)]
pub struct PipelineGrads {
    /// w.r.t. deformed vertices `v_d`
    pub deformed: Option<Vec<Vec3>>,
    /// w.r.t. posed vertices `v_p`
    pub posed: Option<Vec<Vec3>>,
    /// w.r.t. activated scales `s`
    pub scale: Option<Vec<Vec3>>,
    pub delta_position: Option<Vec<Vec3>>,
    pub delta_rotation: Option<Vec<[f64; 4]>>,
    pub delta_scale: Option<Vec<Vec3>>,
}

/// Template + UV anchoring + cached initial scales: maps [`AvatarParams`]
/// to renderable primitives and back-propagates primitive gradients.
#[derive(Debug, Clone)]
pub struct AvatarModel {
    pub template: TemplateMesh,
    pub table: UvSampleTable,
    init_scales: Vec<f64>,
    valid: Vec<Texel>,
}

impl AvatarModel {
    /// Caches initial scales from the mesh posed by `first_frame`.
    pub fn new(template: TemplateMesh, table: UvSampleTable, first_frame: &AvatarParams) -> Result<Self> {
        let deformed = apply_vertex_offsets(&template, &first_frame.vertex_offsets)?;
        let posed = apply_rigid_pose(&deformed, &first_frame.pose)?;
        let init_scales = initial_scales(&table, &posed, SCALE_NEIGHBORS)?;
        Self::with_init_scales(template, table, init_scales)
    }

    pub fn with_init_scales(
        template: TemplateMesh,
        table: UvSampleTable,
        init_scales: Vec<f64>,
    ) -> Result<Self> {
        if init_scales.len() != table.valid_count() {
            return Err(Error::invalid(format!(
                "{} initial scales for {} valid texels",
                init_scales.len(),
                table.valid_count()
            )));
        }
        if let Some(s) = init_scales.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid(format!("initial scale {s} is not positive")));
        }
        let valid = table.valid_texels().copied().collect();
        Ok(Self {
            template,
            table,
            init_scales,
            valid,
        })
    }

    pub fn init_scales(&self) -> &[f64] {
        &self.init_scales
    }

    pub fn gaussian_count(&self) -> usize {
        self.valid.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    /// Zero-delta parameters for this model.
    pub fn zero_params(&self) -> AvatarParams {
        AvatarParams::zeros(self.vertex_count(), self.gaussian_count())
    }

    pub fn forward(&self, params: &AvatarParams) -> Result<AvatarState> {
        let deformed = apply_vertex_offsets(&self.template, &params.vertex_offsets)?;
        let posed = apply_rigid_pose(&deformed, &params.pose)?;
        let init = cloud_from_scales(&self.table, &posed, &self.init_scales);
        let primitives = apply_deltas(&init, params)?;
        Ok(AvatarState {
            deformed,
            posed,
            init,
            primitives,
        })
    }

    /// Gradients w.r.t. every parameter group given rasterizer gradients
    /// `render` (raw primitive space) and any direct loss gradients.
    pub fn backward(
        &self,
        params: &AvatarParams,
        state: &AvatarState,
        render: &GradientSet,
        extra: &PipelineGrads,
    ) -> Result<AvatarParams> {
        let n = self.gaussian_count();
        if render.len() != n {
            return Err(Error::invalid(format!(
                "gradient set has {} entries for {n} gaussians",
                render.len()
            )));
        }
        let mut g = params.zeros_like();

        g.delta_position.copy_from_slice(&render.position);
        g.opacity.copy_from_slice(&render.opacity);
        g.color.copy_from_slice(&render.color);
        g.delta_scale.copy_from_slice(&render.scale);
        for i in 0..n {
            let r = state.init.rotations[i].to_array();
            let d = params.delta_rotation[i];
            let raw_norm = Quaternion::new(r[0] + d[0], r[1] + d[1], r[2] + d[2], r[3] + d[3]).norm();
            // the rasterizer gradient is taken at the normalized quaternion
            g.delta_rotation[i] = render.rotation[i].map(|v| v / raw_norm);
        }
        if let Some(ds) = &extra.scale {
            for (i, gs) in g.delta_scale.iter_mut().enumerate() {
                let s = state.primitives[i].scale;
                for k in 0..3 {
                    gs[k] += ds[i][k] * softplus_grad_from_output(s[k]);
                }
            }
        }
        accumulate(&mut g.delta_position, extra.delta_position.as_deref());
        accumulate(&mut g.delta_rotation, extra.delta_rotation.as_deref());
        accumulate(&mut g.delta_scale, extra.delta_scale.as_deref());

        // positions p_in are barycentric combinations of posed vertices
        let mut d_posed = match &extra.posed {
            Some(p) => p.clone(),
            None => vec![[0.0; 3]; self.vertex_count()],
        };
        for (t, gp) in self.valid.iter().zip(&render.position) {
            for k in 0..3 {
                let v = &mut d_posed[t.corners[k] as usize];
                for c in 0..3 {
                    v[c] += t.bary[k] * gp[c];
                }
            }
        }

        // v_p = R·v_d + T
        let rot = quat_to_rotation(params.pose.rotation)?;
        let rt = rot.transpose();
        let mut d_rot = Mat3::ZERO;
        let mut d_t = [0.0; 3];
        for (i, gp) in d_posed.iter().enumerate() {
            let vd = state.deformed.vertices[i];
            for a in 0..3 {
                d_t[a] += gp[a];
                for b in 0..3 {
                    d_rot.0[a][b] += gp[a] * vd[b];
                }
            }
            g.vertex_offsets[i] = rt.mul_vec(*gp);
        }
        accumulate(&mut g.vertex_offsets, extra.deformed.as_deref());
        g.pose.translation = d_t;
        g.pose.rotation = Quaternion::from_array(rotation_backward(params.pose.rotation, &d_rot)?);
        Ok(g)
    }
}

fn accumulate<const N: usize>(dst: &mut [[f64; N]], src: Option<&[[f64; N]]>) {
    if let Some(src) = src {
        for (d, s) in dst.iter_mut().zip(src) {
            for k in 0..N {
                d[k] += s[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uv_sample_table, procedural};

    fn model() -> (AvatarModel, AvatarParams) {
        let t = procedural::head_mesh(6, 8).unwrap();
        let table = build_uv_sample_table(&t, 12).unwrap();
        let p = AvatarParams::zeros(t.vertex_count(), table.valid_count());
        (AvatarModel::new(t, table, &p).unwrap(), p)
    }

    #[test]
    fn zero_raw_values_activate_to_midpoints() {
        let (m, p) = model();
        let s = m.forward(&p).unwrap();
        for (prim, (pin, sin)) in s.primitives.iter().zip(s.init.positions.iter().zip(&s.init.scales)) {
            assert_eq!(prim.position, *pin);
            assert_eq!(prim.rotation, Quaternion::IDENTITY);
            assert_eq!(prim.opacity, 0.5);
            assert_eq!(prim.color, [0.5; 3]);
            for k in 0..3 {
                assert!((prim.scale[k] - sin[k]).abs() < 1e-12 * sin[k].max(1.0));
            }
        }
        assert!(s.init.rotations.iter().all(|q| *q == Quaternion::IDENTITY));
    }

    #[test]
    fn position_delta_is_local() {
        let (m, mut p) = model();
        let base = m.forward(&p).unwrap().primitives;
        p.delta_position[3] = [0.0, 0.0, 0.005];
        let moved = m.forward(&p).unwrap().primitives;
        for (i, (a, b)) in base.iter().zip(&moved).enumerate() {
            if i == 3 {
                assert!((b.position[2] - a.position[2] - 0.005).abs() < 1e-15);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn small_rotation_delta_is_a_small_z_rotation() {
        let (m, mut p) = model();
        let eps = 1e-3;
        p.delta_rotation[0] = [0.0, 0.0, 0.0, eps];
        let prim = m.forward(&p).unwrap().primitives[0];
        let exact = Quaternion::from_axis_angle([0.0, 0.0, 1.0], 2.0 * eps).unwrap();
        let d = prim.rotation.to_array().iter().zip(exact.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < eps * eps, "{d}");
    }

    #[test]
    fn cardinality_mismatch_is_rejected() {
        let (m, mut p) = model();
        let init = m.forward(&p).unwrap().init;
        p.opacity.pop();
        assert!(apply_deltas(&init, &p).is_err());
    }

    #[test]
    fn too_few_texels_fail_initialization() {
        let t = procedural::head_mesh(3, 3).unwrap();
        let table = build_uv_sample_table(&t, 1).unwrap();
        let mesh = DeformedMesh { vertices: t.vertices.clone() };
        assert!(initialize_cloud(&table, &mesh).is_err());
    }

    #[test]
    fn group_views_round_trip() {
        let (_, mut p) = model();
        for g in ParamGroup::ALL {
            let len = p.group_values(g).len();
            p.with_group_mut(g, |v| v.iter_mut().for_each(|x| *x += 1.0));
            assert!(p.group_values(g).iter().all(|&x| x >= 1.0), "{}", g.name());
            assert_eq!(p.group_values(g).len(), len);
        }
    }
}

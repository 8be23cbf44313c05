use super::{DeformedMesh, TemplateMesh};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Inclusion slack for texel centers on shared UV edges.
const EDGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texel {
    pub face: u32,
    pub corners: [u32; 3],
    pub bary: [f64; 3],
    pub valid: bool,
}

impl Texel {
    const INVALID: Texel = Texel {
        face: u32::MAX,
        corners: [0; 3],
        bary: [0.0; 3],
        valid: false,
    };

    /// Barycentric interpolation of `vertices` at this texel.
    pub fn position(&self, vertices: &[Vec3]) -> Vec3 {
        interpolate(vertices, self)
    }
}

/// Texel → (face, barycentric) lookup over an `N_g × N_g` UV grid. Texel
/// `(i, j)` sits at UV `((i + ½)/N_g, (j + ½)/N_g)` and is stored at `j·N_g + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct UvSampleTable {
    pub resolution: usize,
    pub texels: Vec<Texel>,
    valid: Vec<u32>,
}

impl UvSampleTable {
    pub fn texel(&self, i: usize, j: usize) -> &Texel {
        &self.texels[j * self.resolution + i]
    }

    /// Linear indices of valid texels, ascending. One gaussian per entry.
    pub fn valid_indices(&self) -> &[u32] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.texels.iter().map(|t| t.valid).collect()
    }

    pub fn valid_texels(&self) -> impl Iterator<Item = &Texel> + '_ {
        self.valid.iter().map(move |&k| &self.texels[k as usize])
    }
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Barycentric coordinates of `p` in UV triangle `t`, if inside (edges inclusive).
pub fn barycentric(t: &[[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = cross2(sub2(t[1], t[0]), sub2(t[2], t[0]));
    if area == 0.0 {
        return None;
    }
    let mut b = [
        cross2(sub2(t[1], p), sub2(t[2], p)) / area,
        cross2(sub2(t[2], p), sub2(t[0], p)) / area,
        cross2(sub2(t[0], p), sub2(t[1], p)) / area,
    ];
    if b.iter().any(|&w| w < -EDGE_EPS) {
        return None;
    }
    for w in b.iter_mut() {
        *w = w.max(0.0);
    }
    let s: f64 = b.iter().sum();
    for w in b.iter_mut() {
        *w /= s;
    }
    Some(b)
}

/// Rasterizes the template's UV triangles onto an `n × n` texel grid.
/// Overlaps resolve to the lowest face index.
pub fn build_uv_sample_table(template: &TemplateMesh, n: usize) -> Result<UvSampleTable> {
    if n == 0 {
        return Err(Error::invalid("UV resolution must be at least 1"));
    }
    if !template.has_uvs() {
        return Err(Error::invalid("template mesh has no texture coordinates"));
    }
    let mut texels = vec![Texel::INVALID; n * n];
    let nf = n as f64;
    let texel_range = |lo: f64, hi: f64| -> (usize, usize) {
        let a = (lo * nf - 0.5).ceil().max(0.0) as usize;
        let b = (hi * nf - 0.5).floor().min(nf - 1.0);
        (a, if b < 0.0 { 0 } else { b as usize + 1 })
    };
    for (f, (uv, corners)) in template.face_uvs.iter().zip(&template.faces).enumerate() {
        let umin = uv.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let umax = uv.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let vmin = uv.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let vmax = uv.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let (i0, i1) = texel_range(umin, umax);
        let (j0, j1) = texel_range(vmin, vmax);
        for j in j0..j1 {
            for i in i0..i1 {
                let slot = &mut texels[j * n + i];
                if slot.valid {
                    continue;
                }
                let p = [(i as f64 + 0.5) / nf, (j as f64 + 0.5) / nf];
                if let Some(bary) = barycentric(uv, p) {
                    *slot = Texel {
                        face: f as u32,
                        corners: corners.map(|c| c as u32),
                        bary,
                        valid: true,
                    };
                }
            }
        }
    }
    let valid = texels
        .iter()
        .enumerate()
        .filter(|(_, t)| t.valid)
        .map(|(k, _)| k as u32)
        .collect();
    Ok(UvSampleTable {
        resolution: n,
        texels,
        valid,
    })
}

/// Barycentric interpolation of `mesh` at every valid texel, in table order.
pub fn sample_positions(table: &UvSampleTable, mesh: &DeformedMesh) -> Vec<Vec3> {
    table
        .valid_texels()
        .map(|t| interpolate(&mesh.vertices, t))
        .collect()
}

#[inline]
pub(crate) fn interpolate(vertices: &[Vec3], t: &Texel) -> Vec3 {
    let mut p = [0.0; 3];
    for k in 0..3 {
        let v = vertices[t.corners[k] as usize];
        for (c, pv) in p.iter_mut().enumerate() {
            *pv += t.bary[k] * v[c];
        }
    }
    p
}

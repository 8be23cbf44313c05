//! Minimal Wavefront OBJ support: `v`, `vt` and `f` records. Normals and
//! everything else are ignored; polygons are fan-triangulated.

use std::fmt::Write as _;
use std::path::Path;

use super::TemplateMesh;
use crate::error::{Error, Result};

pub fn read_obj(path: &Path) -> Result<TemplateMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

fn resolve(index: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = index
        .parse()
        .map_err(|_| Error::parse("obj", format!("line {line}: bad index `{index}`")))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(Error::parse(
            "obj",
            format!("line {line}: index {i} out of range ({count} defined)"),
        ));
    }
    Ok(resolved as usize)
}

fn floats<const N: usize>(parts: &mut std::str::SplitWhitespace, line: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for v in out.iter_mut() {
        let tok = parts
            .next()
            .ok_or_else(|| Error::parse("obj", format!("line {line}: too few components")))?;
        *v = tok
            .parse()
            .map_err(|_| Error::parse("obj", format!("line {line}: bad number `{tok}`")))?;
    }
    Ok(out)
}

/// Parses OBJ text into a template mesh (without landmarks).
pub fn parse_obj(text: &str) -> Result<TemplateMesh> {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    let mut any_without_uv = false;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => positions.push(floats::<3>(&mut parts, line_no)?),
            Some("vt") => uvs.push(floats::<2>(&mut parts, line_no)?),
            Some("f") => {
                let mut corners = Vec::new();
                for tok in parts {
                    let mut fields = tok.split('/');
                    let v = resolve(fields.next().unwrap_or(""), positions.len(), line_no)?;
                    let vt = match fields.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, uvs.len(), line_no)?),
                        _ => None,
                    };
                    corners.push((v, vt));
                }
                if corners.len() < 3 {
                    return Err(Error::parse(
                        "obj",
                        format!("line {line_no}: face with fewer than 3 corners"),
                    ));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    faces.push([tri[0].0, tri[1].0, tri[2].0]);
                    match (tri[0].1, tri[1].1, tri[2].1) {
                        (Some(a), Some(b), Some(c)) => face_uvs.push([uvs[a], uvs[b], uvs[c]]),
                        _ => any_without_uv = true,
                    }
                }
            }
            _ => {}
        }
    }
    if any_without_uv {
        if !face_uvs.is_empty() {
            return Err(Error::parse(
                "obj",
                "some faces carry texture coordinates and others do not",
            ));
        }
        face_uvs.clear();
    }
    TemplateMesh::new(positions, faces, face_uvs, Vec::new())
}

/// Serializes a mesh as OBJ with one `vt` per face corner.
pub fn write_obj(mesh: &TemplateMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2]).unwrap();
    }
    for uvs in &mesh.face_uvs {
        for uv in uvs {
            writeln!(out, "vt {:.9} {:.9}", uv[0], uv[1]).unwrap();
        }
    }
    for (k, f) in mesh.faces.iter().enumerate() {
        if mesh.has_uvs() {
            let t = 3 * k + 1;
            writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                t,
                f[1] + 1,
                t + 1,
                f[2] + 1,
                t + 2
            )
            .unwrap();
        } else {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
    }
    out
}

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// One triangle corner: (vertex index, uv index), both 0-based.
pub type Corner = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    uvs: Vec<[f64; 2]>,
    triangles: Vec<[Corner; 3]>,
    /// UV coordinates that fell outside [0,1] and were clamped.
    pub clamped_uvs: usize,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, uvs: Vec<[f64; 2]>, triangles: Vec<[Corner; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::invalid("mesh needs at least one triangle"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &(v, uv) in tri {
                if v >= vertices.len() || uv >= uvs.len() {
                    return Err(Error::invalid(format!("triangle {t} references an out-of-range index")));
                }
            }
        }
        if vertices.iter().flatten().chain(uvs.iter().flatten()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("mesh has non-finite coordinates"));
        }
        let mut clamped_uvs = 0;
        let uvs = uvs
            .into_iter()
            .map(|uv| {
                if uv.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    clamped_uvs += 1;
                }
                uv.map(|c| c.clamp(0.0, 1.0))
            })
            .collect();
        Ok(Self {
            vertices,
            uvs,
            triangles,
            clamped_uvs,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uvs
    }

    pub fn triangles(&self) -> &[[Corner; 3]] {
        &self.triangles
    }

    /// Mean position of the vertices referenced by triangles.
    pub fn centroid(&self) -> [f64; 3] {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &(v, _) in tri {
                used[v] = true;
            }
        }
        let mut sum = [0.0; 3];
        let mut count = 0.0;
        for (v, _) in self.vertices.iter().zip(&used).filter(|(_, u)| **u) {
            for c in 0..3 {
                sum[c] += v[c];
            }
            count += 1.0;
        }
        sum.map(|s| s / count)
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let [a, b, c] = tri.map(|(v, _)| self.vertices[v]);
                let e1 = sub(b, a);
                let e2 = sub(c, a);
                0.5 * norm(cross(e1, e2))
            })
            .sum()
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Resolves a 1-based (or negative, relative) OBJ index against `len` items.
fn resolve_index(token: &str, len: usize, what: &str, path: &str, line: usize) -> Result<usize> {
    let i: i64 = token
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} index '{token}'")))?;
    let resolved = match i {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        i => len.checked_sub(i.unsigned_abs() as usize),
    };
    match resolved {
        Some(r) if r < len => Ok(r),
        _ => Err(parse_err(path, line, format!("{what} index {i} out of range ({len} defined)"))),
    }
}

/// Parses the `v`/`vt`/`f` subset of Wavefront OBJ. Polygons are fan
/// triangulated; every face corner must carry a texture coordinate.
pub fn parse_obj(text: &str, path: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(kind) = tokens.next() else { continue };
        let nums = |tokens: std::str::SplitWhitespace, want: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = tokens
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            if vals.len() < want {
                return Err(parse_err(path, line, format!("'{kind}' needs {want} components")));
            }
            Ok(vals)
        };
        match kind {
            "v" => {
                let v = nums(tokens, 3)?;
                vertices.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let v = nums(tokens, 2)?;
                uvs.push([v[0], v[1]]);
            }
            "f" => {
                let corners: Vec<Corner> = tokens
                    .map(|t| {
                        let mut parts = t.split('/');
                        let v = resolve_index(parts.next().unwrap_or(""), vertices.len(), "vertex", path, line)?;
                        match parts.next() {
                            Some(vt) if !vt.is_empty() => Ok((v, resolve_index(vt, uvs.len(), "uv", path, line)?)),
                            _ => Err(parse_err(path, line, "face corner without a texture coordinate")),
                        }
                    })
                    .collect::<Result<_>>()?;
                if corners.len() < 3 {
                    return Err(parse_err(path, line, "face needs at least 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(parse_err(path, text.lines().count().max(1), "no faces"));
    }
    Mesh::new(vertices, uvs, triangles)
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for uv in &mesh.uvs {
        out.push_str(&format!("vt {} {}\n", uv[0], uv[1]));
    }
    for tri in &mesh.triangles {
        out.push('f');
        for (v, uv) in tri {
            out.push_str(&format!(" {}/{}", v + 1, uv + 1));
        }
        out.push('\n');
    }
    out
}

/// Ellipsoidal head facing +Z with a longitude/latitude unwrap: the front
/// meridian maps to u = 0.5 and the crown to the top texture row.
pub fn head_mesh() -> Mesh {
    const SEGMENTS: usize = 48;
    const RINGS: usize = 24;
    const RADII: [f64; 3] = [0.78, 1.0, 0.88];
    let mut vertices = Vec::with_capacity((SEGMENTS + 1) * (RINGS + 1));
    let mut uvs = Vec::with_capacity(vertices.capacity());
    for r in 0..=RINGS {
        let v = r as f64 / RINGS as f64;
        let lat = (v - 0.5) * PI;
        for s in 0..=SEGMENTS {
            let u = s as f64 / SEGMENTS as f64;
            let lon = (u - 0.5) * 2.0 * PI;
            vertices.push([
                RADII[0] * lat.cos() * lon.sin(),
                RADII[1] * lat.sin(),
                RADII[2] * lat.cos() * lon.cos(),
            ]);
            uvs.push([u, v]);
        }
    }
    let idx = |r: usize, s: usize| r * (SEGMENTS + 1) + s;
    let mut triangles = Vec::with_capacity(SEGMENTS * RINGS * 2);
    for r in 0..RINGS {
        for s in 0..SEGMENTS {
            let (a, b, c, d) = (idx(r, s), idx(r, s + 1), idx(r + 1, s + 1), idx(r + 1, s));
            if r != 0 {
                triangles.push([(a, a), (b, b), (c, c)]);
            }
            if r != RINGS - 1 {
                triangles.push([(a, a), (c, c), (d, d)]);
            }
        }
    }
    Mesh::new(vertices, uvs, triangles).expect("procedural head mesh is valid")
}

//! Triangle meshes and a Wavefront OBJ reader (vertex and face records only).

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.triangles.iter().flatten().map(|&i| self.vertices[i]);
        let first = it.next()?;
        Some(it.fold((first, first), |(mut lo, mut hi), p| {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            (lo, hi)
        }))
    }

    pub fn transformed(&self, scale: f64, offset: [f64; 3]) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|p| [p[0] * scale + offset[0], p[1] * scale + offset[1], p[2] * scale + offset[2]])
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Closed axis-aligned box surface as 12 triangles.
    pub fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> TriMesh {
        let v = |i: usize| [
            if i & 1 == 0 { lo[0] } else { hi[0] },
            if i & 2 == 0 { lo[1] } else { hi[1] },
            if i & 4 == 0 { lo[2] } else { hi[2] },
        ];
        let quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]];
        let mut triangles = Vec::new();
        for q in quads {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        }
        TriMesh { vertices: (0..8).map(v).collect(), triangles }
    }
}

fn parse_index(token: &str, vertex_count: usize, line: usize) -> Result<isize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: isize = head
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad face index {token:?}") })?;
    match raw {
        0 => Err(Error::Parse { line, msg: "face index 0 is invalid".into() }),
        r if r > 0 => Ok(r - 1),
        r => {
            let resolved = vertex_count as isize + r;
            if resolved < 0 {
                Err(Error::Parse { line, msg: format!("relative index {r} before first vertex") })
            } else {
                Ok(resolved)
            }
        }
    }
}

/// Parse `v` and `f` records; polygons are fan-triangulated around their
/// first vertex and `/`-suffixed texture/normal references are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    let mut faces: Vec<(usize, [isize; 3])> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .by_ref()
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line, msg: format!("bad vertex coordinate: {e}") })?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Parse { line, msg: "vertex needs three finite coordinates".into() });
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<isize> = tok
                    .map(|t| parse_index(t, mesh.vertices.len(), line))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse { line, msg: "face needs at least three vertices".into() });
                }
                for w in 1..idx.len() - 1 {
                    faces.push((line, [idx[0], idx[w], idx[w + 1]]));
                }
            }
            _ => {}
        }
    }
    for (line, f) in faces {
        let mut t = [0usize; 3];
        for (slot, &v) in t.iter_mut().zip(&f) {
            if v as usize >= mesh.vertices.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("face index {} out of range ({} vertices)", v + 1, mesh.vertices.len()),
                });
            }
            *slot = v as usize;
        }
        mesh.triangles.push(t);
    }
    Ok(mesh)
}

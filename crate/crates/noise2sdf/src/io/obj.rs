//! Wavefront OBJ meshes: `v`, `vn` and `f` records, 1-based indices.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::parse_error;
use crate::error::Result;
use crate::geom::Point3;
use crate::mesher::TriangleMesh;

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = Vec::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    let with_normals = !mesh.vertex_normals.is_empty();
    if with_normals {
        for n in &mesh.vertex_normals {
            writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
        }
    }
    for t in &mesh.triangles {
        if with_normals {
            writeln!(
                out,
                "f {0}//{0} {1}//{1} {2}//{2}",
                t[0] + 1,
                t[1] + 1,
                t[2] + 1
            )?;
        } else {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") | Some("vn") => {
                let record = &line[..2];
                let vals: Vec<f64> = tok
                    .map(|t| {
                        t.parse().map_err(|_| {
                            parse_error(path, lineno + 1, format!("bad number {t:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if vals.len() < 3 {
                    return Err(parse_error(path, lineno + 1, "vertex needs 3 coordinates"));
                }
                let p = Point3::new(vals[0], vals[1], vals[2]);
                if record.starts_with("vn") {
                    normals.push(p);
                } else {
                    vertices.push(p);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = tok
                    .map(|t| {
                        // Forms: i, i/t, i//n, i/t/n; only the vertex index
                        // matters here.
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| {
                            parse_error(path, lineno + 1, format!("bad face index {t:?}"))
                        })?;
                        if i < 1 {
                            return Err(parse_error(
                                path,
                                lineno + 1,
                                "only positive 1-based indices are supported",
                            ));
                        }
                        Ok(i as u32 - 1)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_error(path, lineno + 1, "face needs 3+ vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // Groups, materials, texture coordinates: irrelevant here.
            _ => {}
        }
    }
    let n = vertices.len() as u32;
    for t in &triangles {
        if t.iter().any(|&i| i >= n) {
            return Err(parse_error(path, 0, "face index out of range"));
        }
    }
    let vertex_normals = if normals.len() == vertices.len() {
        normals
    } else {
        Vec::new()
    };
    Ok(TriangleMesh {
        vertices,
        triangles,
        vertex_normals,
    })
}

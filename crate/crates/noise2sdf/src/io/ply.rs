//! PLY reader/writer for point clouds and triangle meshes. Handles ascii
//! and binary-little-endian files; vertices are written as float32 x/y/z
//! with optional nx/ny/nz, faces as `list uchar int`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::parse_error;
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::mesher::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl ScalarType {
    fn parse(s: &str) -> Option<ScalarType> {
        match s {
            "float" | "float32" => Some(ScalarType::F32),
            "double" | "float64" => Some(ScalarType::F64),
            "char" | "int8" => Some(ScalarType::I8),
            "uchar" | "uint8" => Some(ScalarType::U8),
            "short" | "int16" => Some(ScalarType::I16),
            "ushort" | "uint16" => Some(ScalarType::U16),
            "int" | "int32" => Some(ScalarType::I32),
            "uint" | "uint32" => Some(ScalarType::U32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::F32 | ScalarType::I32 | ScalarType::U32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            ScalarType::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List {
        count_ty: ScalarType,
        item_ty: ScalarType,
    },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(path: &Path, data: &[u8]) -> Result<Header> {
    // The header is ascii terminated by "end_header".
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &data[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CorruptFile(format!("{path:?}: unterminated ply header")))?;
        let line = String::from_utf8_lossy(&rest[..nl]).trim_end_matches('\r').to_string();
        offset += nl + 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            break;
        }
        if offset >= data.len() {
            return Err(Error::CorruptFile(format!(
                "{path:?}: header runs past end of file"
            )));
        }
    }

    if lines.first().map(|s| s.trim()) != Some("ply") {
        return Err(parse_error(path, 1, "missing ply magic line"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (lineno, line) in lines.iter().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() || line.starts_with("comment") || line == "end_header" {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = match tok.next() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLittleEndian),
                    other => {
                        return Err(parse_error(
                            path,
                            lineno + 1,
                            format!("unsupported ply format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| parse_error(path, lineno + 1, "element needs a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_error(path, lineno + 1, "element needs a count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, lineno + 1, "property before element"))?;
                let kind = tok
                    .next()
                    .ok_or_else(|| parse_error(path, lineno + 1, "property needs a type"))?;
                if kind == "list" {
                    let count_ty = tok.next().and_then(ScalarType::parse).ok_or_else(|| {
                        parse_error(path, lineno + 1, "bad list count type")
                    })?;
                    let item_ty = tok.next().and_then(ScalarType::parse).ok_or_else(|| {
                        parse_error(path, lineno + 1, "bad list item type")
                    })?;
                    tok.next()
                        .ok_or_else(|| parse_error(path, lineno + 1, "list needs a name"))?;
                    element.properties.push(Property::List { count_ty, item_ty });
                } else {
                    let ty = ScalarType::parse(kind).ok_or_else(|| {
                        parse_error(path, lineno + 1, format!("unknown type {kind:?}"))
                    })?;
                    let name = tok
                        .next()
                        .ok_or_else(|| parse_error(path, lineno + 1, "property needs a name"))?;
                    element.properties.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            other => {
                return Err(parse_error(
                    path,
                    lineno + 1,
                    format!("unexpected header token {other:?}"),
                ))
            }
        }
    }
    Ok(Header {
        format: format
            .ok_or_else(|| parse_error(path, 0, "header carries no format line"))?,
        elements,
        body_offset: offset,
    })
}

struct PlyContent {
    cloud: PointCloud,
    faces: Vec<[u32; 3]>,
}

fn read_ply(path: &Path) -> Result<PlyContent> {
    let data = fs::read(path)?;
    let header = parse_header(path, &data)?;
    let mut cursor = header.body_offset;
    let mut cloud = PointCloud::default();
    let mut faces = Vec::new();

    // Ascii bodies are tokenized once.
    let ascii_tokens: Vec<String> = if header.format == PlyFormat::Ascii {
        String::from_utf8_lossy(&data[cursor..])
            .split_whitespace()
            .map(|s| s.to_string())
            .collect()
    } else {
        Vec::new()
    };
    let mut token_idx = 0usize;
    let mut next_token = |path: &Path| -> Result<String> {
        let t = ascii_tokens.get(token_idx).cloned().ok_or_else(|| {
            Error::CorruptFile(format!("{path:?}: ascii body ended early"))
        })?;
        token_idx += 1;
        Ok(t)
    };
    let take_bytes = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > data.len() {
            return Err(Error::CorruptFile(format!(
                "{path:?}: binary body ended early"
            )));
        }
        let s = &data[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };

    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        for _ in 0..element.count {
            let mut x = [f64::NAN; 3];
            let mut n = [f64::NAN; 3];
            let mut face_items: Vec<u32> = Vec::new();
            for prop in &element.properties {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = match header.format {
                            PlyFormat::Ascii => {
                                let raw =
                                    next_token(path)?.parse::<f64>().map_err(|_| {
                                        Error::CorruptFile(format!(
                                            "{path:?}: bad ascii scalar in {name}"
                                        ))
                                    })?;
                                // Honor the declared precision so ascii and
                                // binary files carry identical values.
                                if *ty == ScalarType::F32 {
                                    raw as f32 as f64
                                } else {
                                    raw
                                }
                            }
                            PlyFormat::BinaryLittleEndian => {
                                ty.read_f64(take_bytes(&mut cursor, ty.size())?)
                            }
                        };
                        if is_vertex {
                            match name.as_str() {
                                "x" => x[0] = v,
                                "y" => x[1] = v,
                                "z" => x[2] = v,
                                "nx" => n[0] = v,
                                "ny" => n[1] = v,
                                "nz" => n[2] = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List { count_ty, item_ty, .. } => {
                        let count = match header.format {
                            PlyFormat::Ascii => {
                                next_token(path)?.parse::<usize>().map_err(|_| {
                                    Error::CorruptFile(format!("{path:?}: bad list count"))
                                })?
                            }
                            PlyFormat::BinaryLittleEndian => {
                                count_ty.read_f64(take_bytes(&mut cursor, count_ty.size())?)
                                    as usize
                            }
                        };
                        let mut items = Vec::with_capacity(count);
                        for _ in 0..count {
                            let v = match header.format {
                                PlyFormat::Ascii => {
                                    next_token(path)?.parse::<f64>().map_err(|_| {
                                        Error::CorruptFile(format!(
                                            "{path:?}: bad list item"
                                        ))
                                    })?
                                }
                                PlyFormat::BinaryLittleEndian => {
                                    item_ty.read_f64(take_bytes(&mut cursor, item_ty.size())?)
                                }
                            };
                            items.push(v as u32);
                        }
                        if is_face {
                            face_items = items;
                        }
                    }
                }
            }
            if is_vertex {
                if x.iter().any(|v| v.is_nan()) {
                    return Err(Error::CorruptFile(format!(
                        "{path:?}: vertex element lacks x/y/z"
                    )));
                }
                cloud.points.push(Point3::new(x[0], x[1], x[2]));
                if n.iter().all(|v| !v.is_nan()) {
                    cloud.normals.push(Point3::new(n[0], n[1], n[2]));
                }
            }
            if is_face {
                // Fan-triangulate polygons.
                if face_items.len() < 3 {
                    return Err(Error::CorruptFile(format!(
                        "{path:?}: face with fewer than 3 vertices"
                    )));
                }
                for k in 1..face_items.len() - 1 {
                    faces.push([face_items[0], face_items[k], face_items[k + 1]]);
                }
            }
        }
    }
    if !cloud.normals.is_empty() && cloud.normals.len() != cloud.points.len() {
        return Err(Error::CorruptFile(format!(
            "{path:?}: some vertices carry normals and some do not"
        )));
    }
    Ok(PlyContent { cloud, faces })
}

pub fn read_ply_cloud(path: &Path) -> Result<PointCloud> {
    let content = read_ply(path)?;
    content
        .cloud
        .validate()
        .map_err(|e| Error::CorruptFile(format!("{path:?}: {e}")))?;
    Ok(content.cloud)
}

pub fn read_ply_mesh(path: &Path) -> Result<TriangleMesh> {
    let content = read_ply(path)?;
    let n = content.cloud.len() as u32;
    for f in &content.faces {
        if f.iter().any(|&i| i >= n) {
            return Err(Error::CorruptFile(format!(
                "{path:?}: face index out of range"
            )));
        }
    }
    let normals = if content.cloud.has_normals() {
        content.cloud.normals.clone()
    } else {
        Vec::new()
    };
    Ok(TriangleMesh {
        vertices: content.cloud.points,
        triangles: content.faces,
        vertex_normals: normals,
    })
}

fn header_text(
    format: PlyFormat,
    n_vertices: usize,
    with_normals: bool,
    n_faces: Option<usize>,
) -> String {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut h = format!("ply\nformat {fmt} 1.0\nelement vertex {n_vertices}\n");
    h.push_str("property float x\nproperty float y\nproperty float z\n");
    if with_normals {
        h.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if let Some(m) = n_faces {
        h.push_str(&format!(
            "element face {m}\nproperty list uchar int vertex_indices\n"
        ));
    }
    h.push_str("end_header\n");
    h
}

fn write_vertices(
    out: &mut Vec<u8>,
    format: PlyFormat,
    points: &[Point3],
    normals: &[Point3],
) -> Result<()> {
    let with_normals = !normals.is_empty();
    for (i, p) in points.iter().enumerate() {
        let mut row = vec![p.x as f32, p.y as f32, p.z as f32];
        if with_normals {
            let n = normals[i];
            row.extend([n.x as f32, n.y as f32, n.z as f32]);
        }
        match format {
            PlyFormat::Ascii => {
                let text: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", text.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in row {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(())
}

pub fn write_ply_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let mut out = header_text(format, cloud.len(), cloud.has_normals(), None).into_bytes();
    write_vertices(&mut out, format, &cloud.points, &cloud.normals)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn write_ply_mesh(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    let with_normals = !mesh.vertex_normals.is_empty();
    let mut out = header_text(
        format,
        mesh.vertices.len(),
        with_normals,
        Some(mesh.triangles.len()),
    )
    .into_bytes();
    write_vertices(&mut out, format, &mesh.vertices, &mesh.vertex_normals)?;
    for t in &mesh.triangles {
        match format {
            PlyFormat::Ascii => writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?,
            PlyFormat::BinaryLittleEndian => {
                out.push(3u8);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

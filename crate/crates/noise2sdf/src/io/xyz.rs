//! Plain-text XYZ clouds: one `x y z` (or `x y z nx ny nz`) triple per
//! line, whitespace separated, `#` comments.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::parse_error;
use crate::error::Result;
use crate::geom::{Point3, PointCloud};

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 6 {
            return Err(parse_error(
                path,
                lineno + 1,
                format!("expected 3 or 6 columns, found {}", fields.len()),
            ));
        }
        let mut vals = [0.0f64; 6];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.parse().map_err(|_| {
                parse_error(path, lineno + 1, format!("bad number {f:?}"))
            })?;
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if fields.len() == 6 {
            normals.push(Point3::new(vals[3], vals[4], vals[5]));
        }
    }
    if !normals.is_empty() && normals.len() != points.len() {
        return Err(parse_error(
            path,
            0,
            "mixed lines with and without normals",
        ));
    }
    let cloud = PointCloud { points, normals };
    cloud.validate().map_err(|e| parse_error(path, 0, e.to_string()))?;
    Ok(cloud)
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::new();
    if cloud.has_normals() {
        for (p, n) in cloud.points.iter().zip(&cloud.normals) {
            writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        }
    } else {
        for p in &cloud.points {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

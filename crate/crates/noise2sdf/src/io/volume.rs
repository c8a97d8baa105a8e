//! Raw scalar volumes: a small text header (resolution, bounds) followed by
//! `resolution^3` little-endian float32 values in x-fastest order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarGrid;
use crate::geom::Point3;

pub fn write_volume(path: &Path, grid: &ScalarGrid) -> Result<()> {
    let mut out = format!(
        "nsdf-volume 1\nresolution {}\nbounds {} {} {} {} {} {}\ndata\n",
        grid.resolution,
        grid.min.x,
        grid.min.y,
        grid.min.z,
        grid.max.x,
        grid.max.y,
        grid.max.z
    )
    .into_bytes();
    for &v in &grid.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<ScalarGrid> {
    let data = fs::read(path)?;
    let header_end = find_data_marker(&data).ok_or_else(|| {
        Error::CorruptFile(format!("{path:?}: missing volume data marker"))
    })?;
    let header = String::from_utf8_lossy(&data[..header_end]);
    let mut resolution = None;
    let mut bounds = None;
    for line in header.lines() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("nsdf-volume") => {
                if tok.next() != Some("1") {
                    return Err(Error::UnsupportedVersion {
                        found: 0,
                        expected: 1,
                    });
                }
            }
            Some("resolution") => {
                resolution = tok.next().and_then(|t| t.parse::<usize>().ok());
            }
            Some("bounds") => {
                let vals: Vec<f64> = tok.filter_map(|t| t.parse().ok()).collect();
                if vals.len() == 6 {
                    bounds = Some((
                        Point3::new(vals[0], vals[1], vals[2]),
                        Point3::new(vals[3], vals[4], vals[5]),
                    ));
                }
            }
            Some("data") | None => {}
            Some(other) => {
                return Err(Error::CorruptFile(format!(
                    "{path:?}: unexpected header line {other:?}"
                )))
            }
        }
    }
    let resolution =
        resolution.ok_or_else(|| Error::CorruptFile(format!("{path:?}: no resolution")))?;
    let (min, max) = bounds.ok_or_else(|| Error::CorruptFile(format!("{path:?}: no bounds")))?;

    let body = &data[header_end..];
    let expected = resolution * resolution * resolution * 4;
    if body.len() != expected {
        return Err(Error::CorruptFile(format!(
            "{path:?}: expected {expected} bytes of samples, found {}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(ScalarGrid {
        resolution,
        min,
        max,
        values,
    })
}

fn find_data_marker(data: &[u8]) -> Option<usize> {
    // The header ends right after the "data\n" line.
    let needle = b"data\n";
    data.windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
}

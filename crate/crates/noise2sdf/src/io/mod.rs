//! File formats: XYZ and PLY point clouds, OBJ and PLY meshes, network
//! checkpoints, and raw scalar volumes.

mod checkpoint;
mod obj;
mod ply;
mod volume;
mod xyz;

pub use checkpoint::{load_network, save_network};
pub use obj::{read_obj, write_obj};
pub use ply::{read_ply_cloud, read_ply_mesh, write_ply_cloud, write_ply_mesh, PlyFormat};
pub use volume::{read_volume, write_volume};
pub use xyz::{read_xyz, write_xyz};

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::mesher::TriangleMesh;

/// Reads a point cloud, picking the parser from the file extension
/// (`.xyz`, `.txt` or `.ply`).
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match extension(path) {
        Some("ply") => read_ply_cloud(path),
        Some("xyz") | Some("txt") => read_xyz(path),
        _ => Err(Error::invalid(format!(
            "cannot infer cloud format from {path:?} (expected .xyz, .txt or .ply)"
        ))),
    }
}

/// Writes a point cloud; format from the extension. PLY defaults to binary
/// little-endian.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    match extension(path) {
        Some("ply") => write_ply_cloud(path, cloud, PlyFormat::BinaryLittleEndian),
        Some("xyz") | Some("txt") => write_xyz(path, cloud),
        _ => Err(Error::invalid(format!(
            "cannot infer cloud format from {path:?} (expected .xyz, .txt or .ply)"
        ))),
    }
}

/// Reads a mesh (`.obj` or `.ply`).
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    match extension(path) {
        Some("ply") => read_ply_mesh(path),
        Some("obj") => read_obj(path),
        _ => Err(Error::invalid(format!(
            "cannot infer mesh format from {path:?} (expected .obj or .ply)"
        ))),
    }
}

/// Writes a mesh (`.obj` or `.ply`).
pub fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    match extension(path) {
        Some("ply") => write_ply_mesh(path, mesh, PlyFormat::BinaryLittleEndian),
        Some("obj") => write_obj(path, mesh),
        _ => Err(Error::invalid(format!(
            "cannot infer mesh format from {path:?} (expected .obj or .ply)"
        ))),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

pub(crate) fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

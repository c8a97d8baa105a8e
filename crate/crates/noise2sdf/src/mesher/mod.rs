//! Marching-cubes isosurface extraction and exact point-to-mesh distance.

mod tables;

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::ScalarGrid;
use crate::geom::{dist2, stream_rng, Point3, PointCloud};
use tables::{EDGE_TABLE, TRI_TABLE};

/// Corner offsets in the standard cube numbering: 0..3 on the lower z face
/// counterclockwise, 4..7 above them.
const CORNER_OFFSETS: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (1, 0, 0),
    (1, 1, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (1, 1, 1),
    (0, 1, 1),
];

/// Cube edges as corner pairs, in table order.
const EDGE_CORNERS: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Indexed triangle mesh with per-vertex normals.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub vertex_normals: Vec<Point3>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_points(&self, t: usize) -> (Point3, Point3, Point3) {
        let [a, b, c] = self.triangles[t];
        (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        )
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let (a, b, c) = self.triangle_points(t);
        (b - a).cross(c - a).norm() * 0.5
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Counts how many triangles share each undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Closed 2-manifold check: every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        let e = self.edge_incidence().len() as i64;
        let f = self.triangles.len() as i64;
        v - e + f
    }
}

/// Extracts the `level` isosurface of `grid` with the 256-case table,
/// welding shared vertices by lattice edge. Fields that are negative inside
/// come out with outward-facing orientation. A level outside the grid's
/// value range yields an empty mesh (check [`TriangleMesh::is_empty`]).
pub fn marching_cubes(grid: &ScalarGrid, level: f64) -> Result<TriangleMesh> {
    if grid.resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    let r = grid.resolution;

    // Corners landing exactly on the level would interpolate onto lattice
    // points and emit zero-area triangles; nudge them off.
    let mut values = grid.values.clone();
    for v in &mut values {
        if *v == level {
            *v = level + 1e-12;
        }
    }

    let mut mesh = TriangleMesh::default();
    // Lattice edge key -> welded vertex index.
    let mut edge_vertices: HashMap<u64, u32> = HashMap::new();
    let idx = |ix: usize, iy: usize, iz: usize| ix + r * (iy + r * iz);

    for iz in 0..r - 1 {
        for iy in 0..r - 1 {
            for ix in 0..r - 1 {
                let mut corner_vals = [0.0f64; 8];
                let mut cube_index = 0usize;
                for (c, &(dx, dy, dz)) in CORNER_OFFSETS.iter().enumerate() {
                    let v = values[idx(ix + dx, iy + dy, iz + dz)];
                    corner_vals[c] = v;
                    if v < level {
                        cube_index |= 1 << c;
                    }
                }
                let edge_mask = EDGE_TABLE[cube_index];
                if edge_mask == 0 {
                    continue;
                }

                let mut cut_vertices = [u32::MAX; 12];
                for (e, &(c1, c2)) in EDGE_CORNERS.iter().enumerate() {
                    if edge_mask & (1 << e) == 0 {
                        continue;
                    }
                    let key = edge_key(r, ix, iy, iz, e);
                    let entry = edge_vertices.entry(key).or_insert_with(|| {
                        let (dx1, dy1, dz1) = CORNER_OFFSETS[c1];
                        let (dx2, dy2, dz2) = CORNER_OFFSETS[c2];
                        let p1 = grid.position(ix + dx1, iy + dy1, iz + dz1);
                        let p2 = grid.position(ix + dx2, iy + dy2, iz + dz2);
                        let v1 = corner_vals[c1];
                        let v2 = corner_vals[c2];
                        let t = (level - v1) / (v2 - v1);
                        let p = p1 + (p2 - p1) * t;
                        let vid = mesh.vertices.len() as u32;
                        mesh.vertices.push(p);
                        vid
                    });
                    cut_vertices[e] = *entry;
                }

                let row = &TRI_TABLE[cube_index];
                let mut k = 0;
                while row[k] >= 0 {
                    let a = cut_vertices[row[k] as usize];
                    let b = cut_vertices[row[k + 1] as usize];
                    let c = cut_vertices[row[k + 2] as usize];
                    // The table winds for positive-inside fields; swap two
                    // indices so negative-inside comes out outward-facing.
                    mesh.triangles.push([a, c, b]);
                    k += 3;
                }
            }
        }
    }

    mesh.vertex_normals = vertex_normals_from_grid(grid, &mesh.vertices);
    Ok(mesh)
}

/// One lattice edge is identified by its lower corner and axis.
fn edge_key(r: usize, ix: usize, iy: usize, iz: usize, edge: usize) -> u64 {
    let (c1, c2) = EDGE_CORNERS[edge];
    let (x1, y1, z1) = CORNER_OFFSETS[c1];
    let (x2, y2, z2) = CORNER_OFFSETS[c2];
    let (bx, by, bz) = (
        ix + x1.min(x2),
        iy + y1.min(y2),
        iz + z1.min(z2),
    );
    let axis = if x1 != x2 {
        0
    } else if y1 != y2 {
        1
    } else {
        2
    } as u64;
    ((bx + r * (by + r * bz)) as u64) * 3 + axis
}

/// Normals from the field gradient: central differences at lattice nodes
/// (one-sided at the boundary), trilinearly interpolated at each vertex,
/// pointing toward increasing field values.
fn vertex_normals_from_grid(grid: &ScalarGrid, vertices: &[Point3]) -> Vec<Point3> {
    let r = grid.resolution;
    let cell = grid.cell_size();
    let node_grad = |ix: usize, iy: usize, iz: usize| -> Point3 {
        let diff = |lo: f64, hi: f64, h: f64, two: bool| {
            if two {
                (hi - lo) / (2.0 * h)
            } else {
                (hi - lo) / h
            }
        };
        let gx = {
            let (lo, hi, two) = neighbor_pair(ix, r);
            diff(
                grid.value(lo, iy, iz),
                grid.value(hi, iy, iz),
                cell.x,
                two,
            )
        };
        let gy = {
            let (lo, hi, two) = neighbor_pair(iy, r);
            diff(
                grid.value(ix, lo, iz),
                grid.value(ix, hi, iz),
                cell.y,
                two,
            )
        };
        let gz = {
            let (lo, hi, two) = neighbor_pair(iz, r);
            diff(
                grid.value(ix, iy, lo),
                grid.value(ix, iy, hi),
                cell.z,
                two,
            )
        };
        Point3::new(gx, gy, gz)
    };

    vertices
        .iter()
        .map(|&p| {
            // Cell-local coordinates of the vertex.
            let fx = ((p.x - grid.min.x) / cell.x).clamp(0.0, (r - 1) as f64 - 1e-9);
            let fy = ((p.y - grid.min.y) / cell.y).clamp(0.0, (r - 1) as f64 - 1e-9);
            let fz = ((p.z - grid.min.z) / cell.z).clamp(0.0, (r - 1) as f64 - 1e-9);
            let (ix, iy, iz) = (fx as usize, fy as usize, fz as usize);
            let (tx, ty, tz) = (fx - ix as f64, fy - iy as f64, fz - iz as f64);
            let mut g = Point3::ZERO;
            for (dx, dy, dz) in [
                (0, 0, 0),
                (1, 0, 0),
                (0, 1, 0),
                (1, 1, 0),
                (0, 0, 1),
                (1, 0, 1),
                (0, 1, 1),
                (1, 1, 1),
            ] {
                let w = (if dx == 1 { tx } else { 1.0 - tx })
                    * (if dy == 1 { ty } else { 1.0 - ty })
                    * (if dz == 1 { tz } else { 1.0 - tz });
                if w > 0.0 {
                    g = g + node_grad(ix + dx, iy + dy, iz + dz) * w;
                }
            }
            g.normalized().unwrap_or(Point3::new(1.0, 0.0, 0.0))
        })
        .collect()
}

fn neighbor_pair(i: usize, r: usize) -> (usize, usize, bool) {
    if i == 0 {
        (0, 1, false)
    } else if i == r - 1 {
        (r - 2, r - 1, false)
    } else {
        (i - 1, i + 1, true)
    }
}

/// Exact closest point on a triangle (region classification over the
/// barycentric decomposition).
pub fn closest_point_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Exact minimum Euclidean distance from `p` to any triangle of the mesh.
pub fn point_to_mesh_distance(p: Point3, mesh: &TriangleMesh) -> Result<f64> {
    if mesh.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    let mut best = f64::INFINITY;
    for t in 0..mesh.triangles.len() {
        let (a, b, c) = mesh.triangle_points(t);
        let q = closest_point_on_triangle(p, a, b, c);
        best = best.min(dist2(p, q));
    }
    Ok(best.sqrt())
}

/// Area-weighted uniform sample of the mesh surface; normals are the face
/// normals of the sampled triangles. Deterministic given `seed`.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cumulative.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::invalid("mesh has zero total area"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random_range(0.0..acc);
        let t = cumulative.partition_point(|&c| c < u).min(mesh.triangles.len() - 1);
        let (a, b, c) = mesh.triangle_points(t);
        // Uniform barycentric sample.
        let r1: f64 = rng.random_range(0.0..1.0f64);
        let r2: f64 = rng.random_range(0.0..1.0f64);
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(a * wa + b * wb + c * wc);
        let fnormal = (b - a)
            .cross(c - a)
            .normalized()
            .unwrap_or(Point3::new(1.0, 0.0, 0.0));
        normals.push(fnormal);
    }
    Ok(PointCloud::from_points_normals(points, normals))
}

//! Consumers of a trained field: cloud denoising, upsampling, dense grid
//! evaluation and level-set extraction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{add_gaussian_noise, Point3, PointCloud};
use crate::net::{EvalResult, NetScratch, SdfField, SdfNetwork};
use crate::trainer::pull;

pub use crate::net::SdfField as Field;

/// Analytic sphere field `f(q) = |q - center| - radius`; handy as a ground
/// truth for the pull/denoise/mesh pipeline.
#[derive(Debug, Clone, Copy)]
pub struct SphereField {
    pub center: Point3,
    pub radius: f64,
}

impl SphereField {
    pub fn unit() -> SphereField {
        SphereField {
            center: Point3::ZERO,
            radius: 1.0,
        }
    }
}

impl SdfField for SphereField {
    fn eval_at(&self, q: Point3) -> EvalResult {
        let rel = q - self.center;
        let n = rel.norm();
        let gradient = rel.normalized().unwrap_or(Point3::new(1.0, 0.0, 0.0));
        EvalResult {
            value: n - self.radius,
            input_gradient: gradient,
        }
    }
}

/// Pulls every point of `noisy` onto the zero level set, `passes` times.
/// Cardinality is preserved; normals are dropped.
pub fn denoise(field: &(impl SdfField + Sync), noisy: &PointCloud, passes: usize) -> PointCloud {
    level_set_points(field, 0.0, noisy, passes)
}

/// Pulls seed points onto the iso-surface `f = level` by substituting
/// `d - level` for `d` in the pull step.
pub fn level_set_points(
    field: &(impl SdfField + Sync),
    level: f64,
    seeds: &PointCloud,
    passes: usize,
) -> PointCloud {
    let passes = passes.max(1);
    let points: Vec<Point3> = seeds
        .points
        .par_iter()
        .map(|&p0| {
            let mut p = p0;
            for _ in 0..passes {
                let shifted = Offset { field, level };
                p = pull(&shifted, p);
            }
            p
        })
        .collect();
    PointCloud::from_points(points)
}

/// Field with its level shifted: `g(q) = f(q) - level`.
struct Offset<'f, F> {
    field: &'f F,
    level: f64,
}

impl<F: SdfField> SdfField for Offset<'_, F> {
    fn eval_at(&self, q: Point3) -> EvalResult {
        let mut ev = self.field.eval_at(q);
        ev.value -= self.level;
        ev
    }
}

/// Upsamples a sparse cloud by `rate`: jitters `rate` noisy copies with std
/// `sigma_fraction`, denoises each, and concatenates.
pub fn upsample(
    field: &(impl SdfField + Sync),
    sparse: &PointCloud,
    rate: usize,
    sigma_fraction: f64,
    seed: u64,
) -> Result<PointCloud> {
    if rate < 1 {
        return Err(Error::invalid("upsampling rate must be at least 1"));
    }
    let mut points = Vec::with_capacity(rate * sparse.len());
    for copy in 0..rate {
        let jittered = add_gaussian_noise(sparse, sigma_fraction, seed.wrapping_add(copy as u64))?;
        let denoised = denoise(field, &jittered, 1);
        points.extend(denoised.points);
    }
    Ok(PointCloud::from_points(points))
}

/// Dense samples of a scalar field on the corner lattice of an axis-aligned
/// box: `resolution^3` values, x fastest, then y, then z.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub resolution: usize,
    pub min: Point3,
    pub max: Point3,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    /// Lattice position of node `(ix, iy, iz)`.
    pub fn position(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        let r = (self.resolution - 1) as f64;
        Point3::new(
            self.min.x + (self.max.x - self.min.x) * ix as f64 / r,
            self.min.y + (self.max.y - self.min.y) * iy as f64 / r,
            self.min.z + (self.max.z - self.min.z) * iz as f64 / r,
        )
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.resolution * (iy + self.resolution * iz)
    }

    #[inline]
    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    pub fn cell_size(&self) -> Point3 {
        let r = (self.resolution - 1) as f64;
        Point3::new(
            (self.max.x - self.min.x) / r,
            (self.max.y - self.min.y) / r,
            (self.max.z - self.min.z) / r,
        )
    }

    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Default reconstruction bounds: 1.1 times the normalized unit cube.
pub fn default_grid_bounds() -> (Point3, Point3) {
    (Point3::new(-1.1, -1.1, -1.1), Point3::new(1.1, 1.1, 1.1))
}

/// Evaluates the field on the lattice. Rows are processed in parallel but
/// written in index order, so the result does not depend on thread count.
pub fn evaluate_grid(
    field: &(impl SdfField + Sync),
    resolution: usize,
    bounds: (Point3, Point3),
) -> Result<ScalarGrid> {
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    let (min, max) = bounds;
    let mut grid = ScalarGrid {
        resolution,
        min,
        max,
        values: Vec::new(),
    };
    let rows: Vec<Vec<f64>> = (0..resolution * resolution)
        .into_par_iter()
        .map(|row| {
            let iy = row % resolution;
            let iz = row / resolution;
            let mut queries = Vec::with_capacity(resolution);
            for ix in 0..resolution {
                queries.push(grid.position(ix, iy, iz));
            }
            let mut out = Vec::new();
            field.values_into(&queries, &mut out);
            out
        })
        .collect();
    grid.values = rows.into_iter().flatten().collect();
    Ok(grid)
}

/// Value-only evaluation for [`SdfNetwork`] reusing one scratch per row is
/// already provided through `values_into`; this helper exists for callers
/// that want a single query without allocating.
pub fn network_value(net: &SdfNetwork, scratch: &mut NetScratch, q: Point3) -> f64 {
    net.value_with(scratch, q)
}

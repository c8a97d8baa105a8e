//! Geometric primitives, dataset normalization, synthetic noise generation
//! and query sampling around noisy point clouds.
//!
//! All sampling here is a pure function of its inputs and a seed. Seeds are
//! split with a counter-based scheme (`seed`, stream id) so that e.g. the
//! k-th noisy observation is reproducible independently of generation order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// A point (or vector) in 3D, `f64` throughout.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Returns the unit vector in this direction, or `None` for the zero
    /// vector (norm below `1e-300`).
    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        if n < 1e-300 {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coord(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

/// Squared Euclidean distance. Both the k-d tree and every brute-force
/// reference path use this exact expression so that results compare
/// bit-for-bit.
#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl std::ops::Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// An ordered list of 3D points with optional per-point unit normals.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Unit normals, one per point, or empty when absent.
    pub normals: Vec<Point3>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            normals: Vec::new(),
        }
    }

    pub fn from_points_normals(points: Vec<Point3>, normals: Vec<Point3>) -> Self {
        assert_eq!(points.len(), normals.len());
        PointCloud { points, normals }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        !self.normals.is_empty()
    }

    /// Checks the structural invariants: non-empty, finite coordinates,
    /// normals (when present) matching in length and unit within `1e-6`.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("point cloud contains non-finite points"));
        }
        if !self.normals.is_empty() {
            if self.normals.len() != self.points.len() {
                return Err(Error::invalid(format!(
                    "normal count {} does not match point count {}",
                    self.normals.len(),
                    self.points.len()
                )));
            }
            for n in &self.normals {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid("normals must have unit length"));
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = Point3::ZERO;
        for p in &self.points {
            c = c + *p;
        }
        c / self.points.len() as f64
    }
}

/// The similarity transform that carried a cloud into the unit sphere:
/// `normalized = (p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub center: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            center: Point3::ZERO,
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        (p - self.center) / self.scale
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        p * self.scale + self.center
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|&p| self.apply(p)).collect(),
            normals: cloud.normals.clone(),
        }
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|&p| self.invert(p)).collect(),
            normals: cloud.normals.clone(),
        }
    }
}

/// The set of noisy observations of one shape, all expressed in the same
/// normalized frame together with the transform that produced that frame.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub observations: Vec<PointCloud>,
    pub normalization: NormalizationTransform,
}

impl ObservationSet {
    pub fn new(observations: Vec<PointCloud>, normalization: NormalizationTransform) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::invalid("observation set must hold at least one cloud"));
        }
        for obs in &observations {
            obs.validate()?;
        }
        Ok(ObservationSet {
            observations,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// A batch of query points sampled around a parent cloud, with the index of
/// the parent point each query was drawn around.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    pub queries: Vec<Point3>,
    pub source_indices: Vec<usize>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Centers a cloud at its centroid and scales it so the farthest point sits
/// on the unit sphere. Returns the normalized cloud and the transform, which
/// inverts the map exactly.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    cloud.validate()?;
    let center = cloud.centroid();
    let scale = cloud
        .points
        .iter()
        .map(|&p| (p - center).norm())
        .fold(0.0_f64, f64::max);
    if scale <= 0.0 {
        return Err(Error::invalid(
            "cannot normalize a cloud whose points all coincide",
        ));
    }
    let t = NormalizationTransform { center, scale };
    Ok((t.apply_cloud(cloud), t))
}

/// Derives a child RNG from `(seed, stream)`. Streams are independent, so
/// observation k can be regenerated without replaying 0..k-1.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_offset(rng: &mut ChaCha8Rng, sigma: f64) -> Point3 {
    let gx: f64 = rng.sample(StandardNormal);
    let gy: f64 = rng.sample(StandardNormal);
    let gz: f64 = rng.sample(StandardNormal);
    Point3::new(gx, gy, gz) * sigma
}

/// Adds isotropic zero-mean Gaussian noise with standard deviation
/// `sigma_fraction` (a fraction of the unit-sphere radius) to every point.
/// Normals are dropped: they no longer describe the jittered points.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma_fraction: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma_fraction >= 0.0) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    cloud.validate()?;
    let mut rng = stream_rng(seed, 0);
    let points = cloud
        .points
        .iter()
        .map(|&p| p + gaussian_offset(&mut rng, sigma_fraction))
        .collect();
    Ok(PointCloud::from_points(points))
}

/// Adds noise drawn uniformly from the cube `[-h, h]^3` with
/// `h = half_width_fraction`. Kept for qualitative non-Gaussian experiments.
pub fn add_uniform_noise(
    cloud: &PointCloud,
    half_width_fraction: f64,
    seed: u64,
) -> Result<PointCloud> {
    if !(half_width_fraction >= 0.0) {
        return Err(Error::invalid("noise half-width must be non-negative"));
    }
    cloud.validate()?;
    let mut rng = stream_rng(seed, 0);
    let h = half_width_fraction;
    let points = cloud
        .points
        .iter()
        .map(|&p| {
            let ox = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
            let oy = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
            let oz = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
            p + Point3::new(ox, oy, oz)
        })
        .collect();
    Ok(PointCloud::from_points(points))
}

/// Corrupts a normalized clean cloud into `n_obs` independent noisy
/// observations. Observation k uses the RNG stream `(seed, k+1)`.
pub fn make_observation_set(
    clean: &PointCloud,
    n_obs: usize,
    sigma_fraction: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if n_obs < 1 {
        return Err(Error::invalid("observation count must be at least 1"));
    }
    clean.validate()?;
    let mut observations = Vec::with_capacity(n_obs);
    for k in 0..n_obs {
        let mut rng = stream_rng(seed, k as u64 + 1);
        let points = clean
            .points
            .iter()
            .map(|&p| p + gaussian_offset(&mut rng, sigma_fraction))
            .collect();
        observations.push(PointCloud::from_points(points));
    }
    ObservationSet::new(observations, NormalizationTransform::identity())
}

/// Per-point query standard deviations: the distance from each point to its
/// `k_neighbor`-th nearest neighbor (the point itself excluded by index, so
/// coincident duplicates count as neighbors at distance zero).
pub fn query_stds(cloud: &PointCloud, k_neighbor: usize) -> Result<Vec<f64>> {
    cloud.validate()?;
    if k_neighbor < 1 || k_neighbor >= cloud.len() {
        return Err(Error::invalid(format!(
            "k_neighbor must lie in 1..{} (cloud size {})",
            cloud.len(),
            cloud.len()
        )));
    }
    let tree = KdTree::build(&cloud.points);
    let mut stds = Vec::with_capacity(cloud.len());
    for (i, &p) in cloud.points.iter().enumerate() {
        let neighbors = tree.knn_excluding(p, k_neighbor, Some(i));
        let kth = neighbors.last().expect("k >= 1");
        stds.push(kth.dist2.sqrt());
    }
    Ok(stds)
}

/// Prepared sampler for drawing query batches around one noisy cloud. The
/// per-point neighborhood radii are computed once at construction.
#[derive(Debug, Clone)]
pub struct QuerySampler {
    points: Vec<Point3>,
    stds: Vec<f64>,
}

impl QuerySampler {
    pub fn new(cloud: &PointCloud, k_neighbor: usize) -> Result<Self> {
        let stds = query_stds(cloud, k_neighbor)?;
        Ok(QuerySampler {
            points: cloud.points.clone(),
            stds,
        })
    }

    /// Draws `batch` queries: a uniformly chosen parent point plus an
    /// isotropic Gaussian offset scaled by that parent's std.
    pub fn sample_with_rng(&self, batch: usize, rng: &mut ChaCha8Rng) -> QueryBatch {
        let n = self.points.len();
        let mut queries = Vec::with_capacity(batch);
        let mut source_indices = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = rng.random_range(0..n);
            let q = self.points[i] + gaussian_offset(rng, self.stds[i]);
            queries.push(q);
            source_indices.push(i);
        }
        QueryBatch {
            queries,
            source_indices,
        }
    }
}

/// Samples a batch of queries around `cloud`: each query is a parent point
/// plus isotropic Gaussian noise whose std is the parent's distance to its
/// `k_neighbor`-th nearest neighbor.
pub fn sample_queries(
    cloud: &PointCloud,
    batch: usize,
    k_neighbor: usize,
    seed: u64,
) -> Result<QueryBatch> {
    if batch < 1 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let sampler = QuerySampler::new(cloud, k_neighbor)?;
    let mut rng = stream_rng(seed, 0);
    Ok(sampler.sample_with_rng(batch, &mut rng))
}

/// Samples `batch` target points uniformly from `cloud`. With `replace` the
/// draw is with replacement (so `batch` may exceed the cloud size); without
/// it the batch is a uniformly random subset, and `batch == |cloud|` yields
/// a permutation of the cloud.
pub fn sample_target_batch(
    cloud: &PointCloud,
    batch: usize,
    replace: bool,
    seed: u64,
) -> Result<PointCloud> {
    cloud.validate()?;
    if batch < 1 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut rng = stream_rng(seed, 0);
    Ok(sample_target_with_rng(cloud, batch, replace, &mut rng))
}

pub(crate) fn sample_target_with_rng(
    cloud: &PointCloud,
    batch: usize,
    replace: bool,
    rng: &mut ChaCha8Rng,
) -> PointCloud {
    let n = cloud.len();
    let points = if replace {
        (0..batch)
            .map(|_| cloud.points[rng.random_range(0..n)])
            .collect()
    } else {
        assert!(
            batch <= n,
            "cannot draw {batch} distinct points from a cloud of {n}"
        );
        // Partial Fisher-Yates: the first `batch` entries of a random
        // permutation.
        let mut idx: Vec<usize> = (0..n).collect();
        for k in 0..batch {
            let j = rng.random_range(k..n);
            idx.swap(k, j);
        }
        idx[..batch].iter().map(|&i| cloud.points[i]).collect()
    };
    PointCloud::from_points(points)
}

/// Deterministic area-uniform sample of the unit sphere (radius 1, centered
/// at the origin) with radial normals.
pub fn synthetic_sphere(n: usize, seed: u64) -> PointCloud {
    let mut rng = stream_rng(seed, 0);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    while points.len() < n {
        let g = gaussian_offset(&mut rng, 1.0);
        if let Some(dir) = g.normalized() {
            points.push(dir);
            normals.push(dir);
        }
    }
    PointCloud::from_points_normals(points, normals)
}

/// Evenly spaced points on the unit circle in the z = 0 plane, with a
/// seeded phase. Even spacing keeps neighboring points separable under
/// noise, which matters when the circle serves as a matching fixture.
pub fn synthetic_circle(n: usize, seed: u64) -> PointCloud {
    let mut rng = stream_rng(seed, 0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let points = (0..n)
        .map(|k| {
            let theta = phase + std::f64::consts::TAU * k as f64 / n as f64;
            Point3::new(theta.cos(), theta.sin(), 0.0)
        })
        .collect();
    PointCloud::from_points(points)
}

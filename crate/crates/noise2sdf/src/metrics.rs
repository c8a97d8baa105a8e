//! Evaluation metrics and the bundled report.
//!
//! Conventions (papers differ, so they are pinned here):
//! - L2 Chamfer: sum over both directions of the per-cloud mean squared
//!   nearest-neighbor distance.
//! - L1 Chamfer: half the sum of the per-cloud mean unsquared distances.
//! - P2M: mean squared point-to-mesh distance (squared, pairing it with L2
//!   Chamfer).
//! - Normal consistency: symmetric mean absolute cosine over
//!   nearest-neighbor pairs, in [0, 1].
//! - F-score: harmonic mean of precision/recall at threshold tau.
//!
//! Raw values are stored everywhere; the common 1e4/10 display scalings are
//! applied only when formatting.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::kdtree::KdTree;
use crate::mesher::{point_to_mesh_distance, sample_mesh_surface, TriangleMesh};

fn check_non_empty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("point clouds must be non-empty"));
    }
    Ok(())
}

fn nearest_dist2(from: &PointCloud, to_tree: &KdTree) -> Vec<f64> {
    from.points.iter().map(|&p| to_tree.nearest(p).dist2).collect()
}

/// L2 Chamfer distance (sum-of-means convention).
pub fn l2_chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_non_empty(a, b)?;
    let tree_b = KdTree::build(&b.points);
    let tree_a = KdTree::build(&a.points);
    let fwd: f64 = nearest_dist2(a, &tree_b).iter().sum();
    let bwd: f64 = nearest_dist2(b, &tree_a).iter().sum();
    Ok(fwd / a.len() as f64 + bwd / b.len() as f64)
}

/// L1 Chamfer distance (half-sum-of-means convention).
pub fn l1_chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_non_empty(a, b)?;
    let tree_b = KdTree::build(&b.points);
    let tree_a = KdTree::build(&a.points);
    let fwd: f64 = nearest_dist2(a, &tree_b).iter().map(|d| d.sqrt()).sum();
    let bwd: f64 = nearest_dist2(b, &tree_a).iter().map(|d| d.sqrt()).sum();
    Ok(0.5 * (fwd / a.len() as f64 + bwd / b.len() as f64))
}

/// Mean squared point-to-mesh distance.
pub fn p2m(points: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("point cloud must be non-empty"));
    }
    if mesh.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    let sq: Vec<f64> = points
        .points
        .par_iter()
        .map(|&p| {
            let d = point_to_mesh_distance(p, mesh).expect("mesh checked non-empty");
            d * d
        })
        .collect();
    Ok(sq.iter().sum::<f64>() / points.len() as f64)
}

/// Normal consistency: both clouds must carry unit normals.
pub fn normal_consistency(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_non_empty(a, b)?;
    if !a.has_normals() || !b.has_normals() {
        return Err(Error::invalid(
            "normal consistency needs normals on both clouds",
        ));
    }
    let tree_b = KdTree::build(&b.points);
    let tree_a = KdTree::build(&a.points);
    let fwd: f64 = a
        .points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let j = tree_b.nearest(p).index;
            a.normals[i].dot(b.normals[j]).abs()
        })
        .sum::<f64>()
        / a.len() as f64;
    let bwd: f64 = b
        .points
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let i = tree_a.nearest(p).index;
            b.normals[j].dot(a.normals[i]).abs()
        })
        .sum::<f64>()
        / b.len() as f64;
    Ok(0.5 * (fwd + bwd))
}

/// F-score at threshold `tau`: harmonic mean of the fraction of
/// reconstruction points within `tau` of the ground truth (precision) and
/// the converse (recall).
pub fn f_score(recon: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    check_non_empty(recon, gt)?;
    if !(tau > 0.0) {
        return Err(Error::invalid("f-score threshold must be positive"));
    }
    let tau2 = tau * tau;
    let tree_gt = KdTree::build(&gt.points);
    let tree_recon = KdTree::build(&recon.points);
    let precision = recon
        .points
        .iter()
        .filter(|&&p| tree_gt.nearest(p).dist2 <= tau2)
        .count() as f64
        / recon.len() as f64;
    let recall = gt
        .points
        .iter()
        .filter(|&&p| tree_recon.nearest(p).dist2 <= tau2)
        .count() as f64
        / gt.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Evaluation inputs: a cloud, a mesh, or both. A missing cloud is derived
/// from the mesh by area-weighted surface sampling.
#[derive(Debug, Clone, Default)]
pub struct EvalSubject {
    pub cloud: Option<PointCloud>,
    pub mesh: Option<TriangleMesh>,
}

#[derive(Debug, Clone)]
pub struct ReportConfig {
    /// F-score threshold in normalized units.
    pub tau: f64,
    /// Samples drawn from a mesh when a cloud is missing.
    pub mesh_samples: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            tau: 0.01,
            mesh_samples: 100_000,
            seed: 0,
        }
    }
}

/// All metrics the inputs allow, with raw (unscaled) values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub l2cd: Option<f64>,
    pub l1cd: Option<f64>,
    pub p2m: Option<f64>,
    pub nc: Option<f64>,
    pub f_score: Option<f64>,
    pub tau: f64,
}

impl MetricsReport {
    /// Key-value lines; floats print in shortest round-trip form.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("tau={}\n", self.tau));
        let mut put = |k: &str, v: &Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{k}={v}\n"));
            }
        };
        put("l2cd", &self.l2cd);
        put("l1cd", &self.l1cd);
        put("p2m", &self.p2m);
        put("nc", &self.nc);
        put("f_score", &self.f_score);
        out
    }

    pub fn from_key_values(text: &str) -> Result<MetricsReport> {
        let mut report = MetricsReport::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<report>".into(),
                line: lineno + 1,
                msg: "expected key=value".into(),
            })?;
            let v: f64 = value.parse().map_err(|_| Error::Parse {
                path: "<report>".into(),
                line: lineno + 1,
                msg: format!("bad float {value:?}"),
            })?;
            match key {
                "tau" => report.tau = v,
                "l2cd" => report.l2cd = Some(v),
                "l1cd" => report.l1cd = Some(v),
                "p2m" => report.p2m = Some(v),
                "nc" => report.nc = Some(v),
                "f_score" => report.f_score = Some(v),
                _ => {
                    return Err(Error::Parse {
                        path: "<report>".into(),
                        line: lineno + 1,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        Ok(report)
    }

    /// CSV row matching [`Self::csv_header`]; empty cells for missing
    /// metrics.
    pub fn to_csv_row(&self) -> String {
        let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.tau,
            cell(&self.l2cd),
            cell(&self.l1cd),
            cell(&self.p2m),
            cell(&self.nc),
            cell(&self.f_score)
        )
    }

    pub fn csv_header() -> &'static str {
        "tau,l2cd,l1cd,p2m,nc,f_score"
    }

    /// Human-readable summary with the usual display scalings (Chamfer and
    /// P2M x 1e4, L1 Chamfer x 10).
    pub fn display_scaled(&self) -> String {
        let mut out = String::new();
        if let Some(v) = self.l2cd {
            out.push_str(&format!("L2CD x 1e4: {:.4}\n", v * 1e4));
        }
        if let Some(v) = self.l1cd {
            out.push_str(&format!("L1CD x 10:  {:.4}\n", v * 10.0));
        }
        if let Some(v) = self.p2m {
            out.push_str(&format!("P2M  x 1e4: {:.4}\n", v * 1e4));
        }
        if let Some(v) = self.nc {
            out.push_str(&format!("NC:         {v:.4}\n"));
        }
        if let Some(v) = self.f_score {
            out.push_str(&format!("F-score@{}: {v:.4}\n", self.tau));
        }
        out
    }
}

/// Bundles every metric the given inputs support.
pub fn evaluate_report(
    recon: &EvalSubject,
    gt: &EvalSubject,
    cfg: &ReportConfig,
) -> Result<MetricsReport> {
    let recon_cloud = subject_cloud(recon, cfg, 1)?;
    let gt_cloud = subject_cloud(gt, cfg, 2)?;

    let mut report = MetricsReport {
        tau: cfg.tau,
        ..MetricsReport::default()
    };
    if let (Some(rc), Some(gc)) = (&recon_cloud, &gt_cloud) {
        report.l2cd = Some(l2_chamfer(rc, gc)?);
        report.l1cd = Some(l1_chamfer(rc, gc)?);
        report.f_score = Some(f_score(rc, gc, cfg.tau)?);
        if rc.has_normals() && gc.has_normals() {
            report.nc = Some(normal_consistency(rc, gc)?);
        }
    }
    if let (Some(rc), Some(gm)) = (&recon_cloud, &gt.mesh) {
        if !gm.is_empty() {
            report.p2m = Some(p2m(rc, gm)?);
        }
    }
    Ok(report)
}

fn subject_cloud(
    subject: &EvalSubject,
    cfg: &ReportConfig,
    stream: u64,
) -> Result<Option<PointCloud>> {
    match (&subject.cloud, &subject.mesh) {
        (Some(c), _) => Ok(Some(c.clone())),
        (None, Some(m)) if !m.is_empty() => Ok(Some(sample_mesh_surface(
            m,
            cfg.mesh_samples,
            cfg.seed.wrapping_add(stream),
        )?)),
        _ => Ok(None),
    }
}

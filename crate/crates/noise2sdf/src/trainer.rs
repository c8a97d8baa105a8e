//! The training loop: pull sampled queries onto the surface with the
//! current field, match the pulled batch against a batch from another noisy
//! observation under the earth mover's distance, regularize with geometric
//! consistency, and descend with Adam.
//!
//! Gradients are taken with the assignment held fixed (envelope rule). The
//! path through the field gradient inside the pull operator is
//! differentiated exactly by default; `pull_grad_detach` freezes that
//! direction for ablations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{
    sample_target_with_rng, ObservationSet, Point3, PointCloud, QueryBatch, QuerySampler,
};
use crate::net::{ParamGradients, SdfField, SdfNetwork};
use crate::tape::{NodeId, Tape};
use crate::transport::{chamfer_match, default_bid_budget, emd_approx, emd_exact};

/// Distance metric used to compare the pulled batch with the target batch.
/// Chamfer exists for the ablation study; it cannot do the statistical
/// reasoning EMD does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMetric {
    Emd,
    Chamfer,
}

/// Observation pairing per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Draw (i, j) uniformly per iteration; j may equal i.
    MultiObservation,
    /// Queries around the first observation, targets from it as well.
    SingleObservation,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lambda: f64,
    pub iterations: u64,
    pub learning_rate: f64,
    pub mode: TrainMode,
    pub exact_emd_threshold: usize,
    pub seed: u64,
    /// Treat the distance-to-pulled-set target in the geometric-consistency
    /// hinge as a constant during backward.
    pub gc_detach: bool,
    /// Freeze the pull direction (the field gradient) during backward;
    /// ablation switch, off by default.
    pub pull_grad_detach: bool,
    /// Query std = distance to this nearest neighbor of the parent point.
    pub k_neighbor: usize,
    pub metric: LossMetric,
    /// Clamp on the gradient norm in the pull denominator.
    pub grad_eps: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 250,
            lambda: 0.1,
            iterations: 40_000,
            learning_rate: 1e-4,
            mode: TrainMode::MultiObservation,
            exact_emd_threshold: 1024,
            seed: 0,
            gc_detach: true,
            pull_grad_detach: false,
            k_neighbor: 50,
            metric: LossMetric::Emd,
            grad_eps: 1e-8,
            hidden_layers: 8,
            hidden_width: 256,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.grad_eps > 0.0) {
            return Err(Error::invalid("gradient clamp must be positive"));
        }
        Ok(())
    }
}

/// The two loss terms of one iteration. `total = emd_term + lambda *
/// gc_term`; under the Chamfer ablation `emd_term` carries the Chamfer cost
/// instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub emd_term: f64,
    pub gc_term: f64,
    pub total: f64,
}

/// Adam with bias correction; moments shaped like the network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: ParamGradients,
    pub second_moment: ParamGradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &SdfNetwork, learning_rate: f64) -> AdamState {
        AdamState {
            first_moment: ParamGradients::zeros_like(net),
            second_moment: ParamGradients::zeros_like(net),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut SdfNetwork, grads: &ParamGradients) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.first_moment.layers[li];
            let v = &mut self.second_moment.layers[li];
            update_slice(
                &mut layer.w,
                &g.w,
                &mut m.w,
                &mut v.w,
                self.beta1,
                self.beta2,
                bc1,
                bc2,
                self.learning_rate,
                self.epsilon,
            );
            update_slice(
                &mut layer.b,
                &g.b,
                &mut m.b,
                &mut v.b,
                self.beta1,
                self.beta2,
                bc1,
                bc2,
                self.learning_rate,
                self.epsilon,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    theta: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    for k in 0..theta.len() {
        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Everything one training run owns.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub network: SdfNetwork,
    pub optimizer: AdamState,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossBreakdown>,
}

impl TrainState {
    pub fn new(network: SdfNetwork, cfg: &TrainConfig) -> TrainState {
        let optimizer = AdamState::new(&network, cfg.learning_rate);
        TrainState {
            network,
            optimizer,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            history: Vec::new(),
        }
    }
}

/// Moves `q` along the negative normalized field gradient by its signed
/// distance: `q - d * grad / max(|grad|, eps)`. On-surface points (d = 0)
/// stay put.
pub fn pull(field: &impl SdfField, q: Point3) -> Point3 {
    pull_with_eps(field, q, 1e-8)
}

pub fn pull_with_eps(field: &impl SdfField, q: Point3, eps: f64) -> Point3 {
    let ev = field.eval_at(q);
    let g = ev.input_gradient;
    let denom = g.norm().max(eps);
    q - g * (ev.value / denom)
}

/// Frozen matching structure for one loss evaluation: differentiating with
/// these held fixed is the envelope rule, and re-evaluating the loss at
/// perturbed parameters with the same plan is what finite-difference checks
/// need.
#[derive(Debug, Clone)]
pub(crate) struct LossPlan {
    pub metric: MetricPlan,
    pub gc: Option<GcPlan>,
    /// Pull directions captured when `pull_grad_detach` is set, so a
    /// re-evaluation of the frozen loss uses the same constants.
    pub detached_grads: Option<Vec<Point3>>,
}

#[derive(Debug, Clone)]
pub(crate) enum MetricPlan {
    /// EMD assignment: query k is matched to target `phi[k]`.
    Emd { phi: Vec<usize> },
    /// Chamfer nearest neighbors in both directions.
    Chamfer {
        fwd: Vec<usize>,
        bwd: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub(crate) enum GcPlan {
    /// Distance to the pulled set, detached as constants.
    Detached(Vec<f64>),
    /// Index of the nearest pulled point; the distance stays on the tape.
    Attached(Vec<usize>),
}

/// Records the whole loss for one batch on `tape` and returns the root node
/// plus the breakdown and the (possibly frozen) plan.
pub(crate) fn loss_graph(
    tape: &mut Tape,
    queries: &[Point3],
    targets: &[Point3],
    cfg: &TrainConfig,
    frozen: Option<&LossPlan>,
) -> Result<(NodeId, LossBreakdown, LossPlan)> {
    let b = queries.len();
    debug_assert_eq!(targets.len(), b);

    // Per-query forward + pull subgraphs.
    let mut d_nodes = Vec::with_capacity(b);
    let mut pulled_nodes = Vec::with_capacity(b);
    let mut pulled_points = Vec::with_capacity(b);
    let mut captured_grads = if cfg.pull_grad_detach {
        Some(Vec::with_capacity(b))
    } else {
        None
    };
    for (k, &q) in queries.iter().enumerate() {
        let ev = tape.network_eval(q);
        let grad = if cfg.pull_grad_detach {
            // Frozen direction: reuse the captured constant when
            // re-evaluating a frozen plan, otherwise capture the current
            // one.
            let g = match frozen {
                Some(LossPlan {
                    detached_grads: Some(gs),
                    ..
                }) => gs[k],
                _ => tape.point(ev.gradient),
            };
            if let Some(cap) = captured_grads.as_mut() {
                cap.push(g);
            }
            tape.constant_point(g)
        } else {
            ev.gradient
        };
        let n = tape.norm(grad, cfg.grad_eps);
        let r = tape.scalar_recip(n);
        let s = tape.scalar_mul(ev.value, r);
        let step = tape.scale_vec(s, grad);
        let qc = tape.constant_point(q);
        let p = tape.sub(qc, step);
        d_nodes.push(ev.value);
        pulled_nodes.push(p);
        pulled_points.push(tape.point(p));
    }

    let plan = match frozen {
        Some(p) => p.clone(),
        None => LossPlan {
            metric: solve_metric_plan(&pulled_points, targets, cfg)?,
            gc: if cfg.lambda > 0.0 {
                Some(gc_plan(queries, &pulled_points, cfg))
            } else {
                None
            },
            detached_grads: captured_grads,
        },
    };

    // Matching term.
    let metric_node = match &plan.metric {
        MetricPlan::Emd { phi } => {
            let mut terms = Vec::with_capacity(b);
            for (k, &j) in phi.iter().enumerate() {
                let tc = tape.constant_point(targets[j]);
                let diff = tape.sub(pulled_nodes[k], tc);
                terms.push(tape.norm(diff, 0.0));
            }
            tape.sum(&terms)
        }
        MetricPlan::Chamfer { fwd, bwd } => {
            let mut fwd_terms = Vec::with_capacity(b);
            for (k, &j) in fwd.iter().enumerate() {
                let tc = tape.constant_point(targets[j]);
                let diff = tape.sub(pulled_nodes[k], tc);
                fwd_terms.push(tape.dot(diff, diff));
            }
            let mut bwd_terms = Vec::with_capacity(b);
            for (j, &k) in bwd.iter().enumerate() {
                let tc = tape.constant_point(targets[j]);
                let diff = tape.sub(tc, pulled_nodes[k]);
                bwd_terms.push(tape.dot(diff, diff));
            }
            let f = tape.sum(&fwd_terms);
            let f = tape.scale_const(f, 1.0 / b as f64);
            let w = tape.sum(&bwd_terms);
            let w = tape.scale_const(w, 1.0 / b as f64);
            tape.add(f, w)
        }
    };

    // Geometric-consistency term.
    let gc_node = match &plan.gc {
        None => None,
        Some(GcPlan::Detached(consts)) => {
            let mut hinges = Vec::with_capacity(b);
            for k in 0..b {
                let a = tape.scalar_abs(d_nodes[k]);
                let e = tape.add_const(a, -consts[k]);
                hinges.push(tape.hinge(e));
            }
            let s = tape.sum(&hinges);
            Some(tape.scale_const(s, 1.0 / b as f64))
        }
        Some(GcPlan::Attached(indices)) => {
            let mut hinges = Vec::with_capacity(b);
            for k in 0..b {
                let a = tape.scalar_abs(d_nodes[k]);
                let qc = tape.constant_point(queries[k]);
                let diff = tape.sub(qc, pulled_nodes[indices[k]]);
                let m = tape.norm(diff, 0.0);
                let e = tape.sub(a, m);
                hinges.push(tape.hinge(e));
            }
            let s = tape.sum(&hinges);
            Some(tape.scale_const(s, 1.0 / b as f64))
        }
    };

    let total_node = match gc_node {
        Some(gc) => {
            let scaled = tape.scale_const(gc, cfg.lambda);
            tape.add(metric_node, scaled)
        }
        None => metric_node,
    };

    let emd_term = tape.scalar(metric_node);
    let gc_term = match gc_node {
        Some(gc) => tape.scalar(gc),
        // Reported even when lambda = 0 so logs stay comparable; it takes no
        // part in the gradient then.
        None => {
            let mut acc = 0.0;
            for k in 0..b {
                let d_abs = tape.scalar(d_nodes[k]).abs();
                let mut best_d2 = f64::INFINITY;
                for &p in &pulled_points {
                    best_d2 = best_d2.min(crate::geom::dist2(queries[k], p));
                }
                acc += (d_abs - best_d2.sqrt()).max(0.0);
            }
            acc / b as f64
        }
    };
    let breakdown = LossBreakdown {
        emd_term,
        gc_term,
        total: tape.scalar(total_node),
    };
    Ok((total_node, breakdown, plan))
}

fn solve_metric_plan(
    pulled: &[Point3],
    targets: &[Point3],
    cfg: &TrainConfig,
) -> Result<MetricPlan> {
    let src = PointCloud::from_points(pulled.to_vec());
    let tgt = PointCloud::from_points(targets.to_vec());
    match cfg.metric {
        LossMetric::Emd => {
            let b = pulled.len();
            let matching = if b <= cfg.exact_emd_threshold {
                emd_exact(&src, &tgt)?
            } else {
                match emd_approx(&src, &tgt, default_bid_budget(b)) {
                    Ok(m) => m,
                    // Fall back to the exact solver rather than training on
                    // a broken assignment.
                    Err(Error::ApproximationFailed { .. }) => emd_exact(&src, &tgt)?,
                    Err(e) => return Err(e),
                }
            };
            Ok(MetricPlan::Emd {
                phi: matching.assignment,
            })
        }
        LossMetric::Chamfer => {
            let m = chamfer_match(&src, &tgt)?;
            Ok(MetricPlan::Chamfer {
                fwd: m.src_to_tgt.iter().map(|&(j, _)| j).collect(),
                bwd: m.tgt_to_src.iter().map(|&(k, _)| k).collect(),
            })
        }
    }
}

fn gc_plan(queries: &[Point3], pulled: &[Point3], cfg: &TrainConfig) -> GcPlan {
    let b = queries.len();
    let mut indices = Vec::with_capacity(b);
    let mut dists = Vec::with_capacity(b);
    for &q in queries {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (j, &p) in pulled.iter().enumerate() {
            let d2 = crate::geom::dist2(q, p);
            if d2 < best_d2 {
                best_d2 = d2;
                best = j;
            }
        }
        indices.push(best);
        dists.push(best_d2.sqrt());
    }
    if cfg.gc_detach {
        GcPlan::Detached(dists)
    } else {
        GcPlan::Attached(indices)
    }
}

/// Computes the loss and exact parameter gradients for one batch, with the
/// assignment held fixed. Does not update the network.
pub fn loss_step(
    state: &TrainState,
    queries: &QueryBatch,
    target: &PointCloud,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, ParamGradients)> {
    if queries.len() != target.len() {
        return Err(Error::invalid(format!(
            "query batch ({}) and target batch ({}) sizes differ",
            queries.len(),
            target.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    let mut tape = Tape::new(&state.network);
    let (root, breakdown, _plan) =
        loss_graph(&mut tape, &queries.queries, &target.points, cfg, None)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "loss is not finite: {:?}",
            breakdown
        )));
    }
    let grads = tape.backward_params(root)?;
    Ok((breakdown, grads))
}

/// Runs the optimization loop over the observation set. Deterministic given
/// the config seed (the loop is single-threaded).
pub fn train(
    observations: &ObservationSet,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(u64, &LossBreakdown),
) -> Result<TrainState> {
    cfg.validate()?;
    let network = SdfNetwork::init(cfg.hidden_layers, cfg.hidden_width, cfg.seed)?;
    train_with_network(network, observations, cfg, progress)
}

/// Same as [`train`] but starting from a caller-built network.
pub fn train_with_network(
    network: SdfNetwork,
    observations: &ObservationSet,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(u64, &LossBreakdown),
) -> Result<TrainState> {
    cfg.validate()?;
    let n_obs = observations.len();
    let samplers: Vec<QuerySampler> = observations
        .observations
        .iter()
        .map(|obs| QuerySampler::new(obs, cfg.k_neighbor))
        .collect::<Result<_>>()?;

    let mut state = TrainState::new(network, cfg);
    state.history.reserve(cfg.iterations as usize);

    let mut tape_net = state.network.clone();
    let mut initial_total = f64::INFINITY;
    for iter in 0..cfg.iterations {
        let (i, j) = match cfg.mode {
            TrainMode::SingleObservation => (0usize, 0usize),
            TrainMode::MultiObservation => (
                state.rng.random_range(0..n_obs),
                state.rng.random_range(0..n_obs),
            ),
        };
        let queries = samplers[i].sample_with_rng(cfg.batch_size, &mut state.rng);
        let target = sample_target_with_rng(
            &observations.observations[j],
            cfg.batch_size,
            true,
            &mut state.rng,
        );

        // The tape borrows the network immutably, so work on a copy that is
        // kept in sync after each update.
        tape_net.clone_from(&state.network);
        let mut tape = Tape::new(&tape_net);
        let (root, breakdown, _plan) =
            loss_graph(&mut tape, &queries.queries, &target.points, cfg, None)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "loss diverged to a non-finite value at iteration {iter}"
            )));
        }
        if iter == 0 {
            initial_total = breakdown.total.max(1e-300);
        } else if breakdown.total > 1e3 * initial_total {
            return Err(Error::NumericalFailure(format!(
                "loss exceeded 1000x its initial value at iteration {iter} ({} vs {initial_total})",
                breakdown.total
            )));
        }
        let grads = tape.backward_params(root)?;
        drop(tape);
        state.optimizer.step(&mut state.network, &grads);
        state.iteration = iter + 1;
        progress(iter, &breakdown);
        state.history.push(breakdown);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SphereField;
    use crate::geom::{make_observation_set, sample_queries, synthetic_circle, synthetic_sphere};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            iterations: 10,
            k_neighbor: 8,
            hidden_layers: 2,
            hidden_width: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pull_fixed_point_on_surface() {
        let field = SphereField::unit();
        let q = Point3::new(0.0, 1.0, 0.0);
        let p = pull(&field, q);
        assert!((p - q).norm() < 1e-15);
    }

    #[test]
    fn pull_outside_sphere() {
        let field = SphereField::unit();
        let p = pull(&field, Point3::new(0.0, 0.0, 2.0));
        assert!((p - Point3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn pull_inside_sphere() {
        // d = -0.5 and the gradient points outward, so the point moves out
        // to the surface.
        let field = SphereField::unit();
        let p = pull(&field, Point3::new(0.5, 0.0, 0.0));
        assert!((p - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    fn batch_fixture(seed: u64) -> (QueryBatch, PointCloud) {
        let cloud = synthetic_sphere(64, seed);
        let noisy = crate::geom::add_gaussian_noise(&cloud, 0.05, seed + 1).unwrap();
        let queries = sample_queries(&noisy, 16, 8, seed + 2).unwrap();
        let target = crate::geom::sample_target_batch(&noisy, 16, true, seed + 3).unwrap();
        (queries, target)
    }

    #[test]
    fn lambda_zero_total_equals_emd_term() {
        let cfg = TrainConfig {
            lambda: 0.0,
            ..small_cfg()
        };
        let net = SdfNetwork::init(2, 16, 5).unwrap();
        let state = TrainState::new(net, &cfg);
        let (queries, target) = batch_fixture(7);
        let (breakdown, _) = loss_step(&state, &queries, &target, &cfg).unwrap();
        assert_eq!(breakdown.total, breakdown.emd_term);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        // Zero weights make f identically tanh(0) = 0, so pulled queries
        // stay put; with queries equal to targets both terms vanish.
        let mut net = SdfNetwork::init(2, 8, 0).unwrap();
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let cfg = small_cfg();
        let state = TrainState::new(net, &cfg);
        let cloud = synthetic_sphere(16, 3);
        let queries = QueryBatch {
            queries: cloud.points.clone(),
            source_indices: (0..16).collect(),
        };
        let (breakdown, grads) = loss_step(&state, &queries, &cloud, &cfg).unwrap();
        assert_eq!(breakdown.emd_term, 0.0);
        assert_eq!(breakdown.gc_term, 0.0);
        assert_eq!(breakdown.total, 0.0);
        let _ = grads;
    }

    #[test]
    fn accounting_identity_holds() {
        for (lambda, gc_detach) in [(0.1, true), (0.1, false), (0.7, true)] {
            let cfg = TrainConfig {
                lambda,
                gc_detach,
                ..small_cfg()
            };
            let net = SdfNetwork::init(2, 16, 11).unwrap();
            let state = TrainState::new(net, &cfg);
            let (queries, target) = batch_fixture(13);
            let (b, _) = loss_step(&state, &queries, &target, &cfg).unwrap();
            assert!(
                (b.total - (b.emd_term + lambda * b.gc_term)).abs() < 1e-12,
                "total {} vs {}",
                b.total,
                b.emd_term + lambda * b.gc_term
            );
            assert!(b.gc_term >= 0.0);
        }
    }

    #[test]
    fn batch_size_mismatch_rejected() {
        let cfg = small_cfg();
        let net = SdfNetwork::init(2, 8, 1).unwrap();
        let state = TrainState::new(net, &cfg);
        let (queries, _) = batch_fixture(17);
        let target = synthetic_sphere(8, 18);
        assert!(matches!(
            loss_step(&state, &queries, &target, &cfg),
            Err(Error::InvalidInput(_))
        ));
    }

    /// Finite differences on a 20-parameter subset of the full loss with the
    /// matching plan frozen (envelope rule).
    #[test]
    fn loss_gradients_match_finite_differences() {
        for (gc_detach, pull_grad_detach, metric) in [
            (true, false, LossMetric::Emd),
            (false, false, LossMetric::Emd),
            (true, true, LossMetric::Emd),
            (true, false, LossMetric::Chamfer),
        ] {
            let cfg = TrainConfig {
                lambda: 0.3,
                gc_detach,
                pull_grad_detach,
                metric,
                ..small_cfg()
            };
            let net = SdfNetwork::init(2, 10, 23).unwrap();
            let (queries, target) = batch_fixture(29);

            let mut tape = Tape::new(&net);
            let (_, _, mut plan) =
                loss_graph(&mut tape, &queries.queries, &target.points, &cfg, None).unwrap();
            drop(tape);
            // A query whose own pulled point is the nearest sits exactly on
            // the hinge kink, where one-sided derivatives differ and finite
            // differences are meaningless. Shift the frozen constants to put
            // every hinge strictly on its active branch.
            if let Some(GcPlan::Detached(consts)) = &mut plan.gc {
                for c in consts.iter_mut() {
                    *c -= 0.01;
                }
            }

            let mut tape = Tape::new(&net);
            let (root, _, _) = loss_graph(
                &mut tape,
                &queries.queries,
                &target.points,
                &cfg,
                Some(&plan),
            )
            .unwrap();
            let grads = tape.backward_params(root).unwrap();
            drop(tape);

            let loss_at = |net: &SdfNetwork| -> f64 {
                let mut tape = Tape::new(net);
                let (root, b, _) =
                    loss_graph(&mut tape, &queries.queries, &target.points, &cfg, Some(&plan))
                        .unwrap();
                let _ = root;
                b.total
            };

            // 20 parameters spread over all layers.
            let h = 1e-6;
            let mut checked = 0;
            'outer: for li in 0..net.layers.len() {
                let stride = (net.layers[li].w.len() / 7).max(1);
                for wi in (0..net.layers[li].w.len()).step_by(stride) {
                    let mut plus = net.clone();
                    plus.layers[li].w[wi] += h;
                    let mut minus = net.clone();
                    minus.layers[li].w[wi] -= h;
                    let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                    let an = grads.layers[li].w[wi];
                    let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(
                        err < 1e-3,
                        "cfg ({gc_detach},{pull_grad_detach},{metric:?}) layer {li} w[{wi}]: analytic {an} fd {fd}"
                    );
                    checked += 1;
                    if checked >= 20 {
                        break 'outer;
                    }
                }
            }
            assert!(checked >= 20);
        }
    }

    /// With lambda = 0 the recorded graph must be exactly the matching term:
    /// adding a zero-weighted consistency subgraph must not change any
    /// parameter gradient.
    #[test]
    fn lambda_zero_matches_stubbed_gc_path() {
        let cfg = TrainConfig {
            lambda: 0.0,
            ..small_cfg()
        };
        let net = SdfNetwork::init(2, 12, 31).unwrap();
        let (queries, target) = batch_fixture(37);

        let mut tape = Tape::new(&net);
        let (root, b0, plan) =
            loss_graph(&mut tape, &queries.queries, &target.points, &cfg, None).unwrap();
        let g0 = tape.backward_params(root).unwrap();
        drop(tape);

        // Same plan, but force the gc subgraph onto the tape with zero
        // weight.
        let forced = LossPlan {
            metric: plan.metric.clone(),
            gc: Some(gc_plan_public(&queries.queries, &net, &cfg)),
            detached_grads: None,
        };
        let mut tape = Tape::new(&net);
        let (root, b1, _) = loss_graph(
            &mut tape,
            &queries.queries,
            &target.points,
            &cfg,
            Some(&forced),
        )
        .unwrap();
        let g1 = tape.backward_params(root).unwrap();

        assert_eq!(b0.emd_term, b1.emd_term);
        assert_eq!(b0.total, b1.total);
        for (l0, l1) in g0.layers.iter().zip(&g1.layers) {
            for (a, b) in l0.w.iter().zip(&l1.w) {
                assert_eq!(a, b);
            }
            for (a, b) in l0.b.iter().zip(&l1.b) {
                assert_eq!(a, b);
            }
        }
    }

    fn gc_plan_public(queries: &[Point3], net: &SdfNetwork, cfg: &TrainConfig) -> GcPlan {
        let pulled: Vec<Point3> = queries
            .iter()
            .map(|&q| pull_with_eps(net, q, cfg.grad_eps))
            .collect();
        gc_plan(queries, &pulled, cfg)
    }

    #[test]
    fn adam_single_step_matches_closed_form() {
        // One-layer linear toy: a single step against the hand-computed
        // Adam update.
        let mut net = SdfNetwork::init(1, 1, 0).unwrap();
        net.layers[0].w = vec![0.5, -0.25, 0.125];
        net.layers[0].b = vec![0.0];
        net.layers[1].w = vec![1.0];
        net.layers[1].b = vec![0.0];
        let lr = 0.01;
        let mut adam = AdamState::new(&net, lr);
        let mut grads = ParamGradients::zeros_like(&net);
        grads.layers[0].w = vec![0.2, -0.4, 0.0];
        grads.layers[0].b = vec![1.0];
        grads.layers[1].w = vec![-3.0];
        grads.layers[1].b = vec![0.5];

        let before = net.clone();
        adam.step(&mut net, &grads);

        // Closed form at t = 1: m_hat = g, v_hat = g^2, so the update is
        // -lr * g / (|g| + eps).
        for li in 0..2 {
            for (k, (&w_new, &w_old)) in net.layers[li]
                .w
                .iter()
                .zip(&before.layers[li].w)
                .enumerate()
            {
                let g: f64 = grads.layers[li].w[k];
                let expect = w_old - lr * g / (g.abs() + 1e-8);
                assert!(
                    (w_new - expect).abs() < 1e-15,
                    "layer {li} w[{k}]: {w_new} vs {expect}"
                );
            }
            let g: f64 = grads.layers[li].b[0];
            let expect = before.layers[li].b[0] - lr * g / (g.abs() + 1e-8);
            assert!((net.layers[li].b[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_iterations_returns_initial_network() {
        let clean = synthetic_sphere(64, 41);
        let obs = make_observation_set(&clean, 2, 0.02, 42).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            ..small_cfg()
        };
        let state = train(&obs, &cfg, &mut |_, _| {}).unwrap();
        let fresh = SdfNetwork::init(cfg.hidden_layers, cfg.hidden_width, cfg.seed).unwrap();
        assert_eq!(state.network, fresh);
        assert!(state.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let clean = synthetic_sphere(64, 43);
        let obs = make_observation_set(&clean, 3, 0.02, 44).unwrap();
        let cfg = TrainConfig {
            iterations: 25,
            seed: 9,
            ..small_cfg()
        };
        let a = train(&obs, &cfg, &mut |_, _| {}).unwrap();
        let b = train(&obs, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.total, y.total);
            assert_eq!(x.emd_term, y.emd_term);
            assert_eq!(x.gc_term, y.gc_term);
        }
        assert_eq!(a.network, b.network);
    }

    /// Medium fixture: a circle in 3D, eight observations. After training,
    /// |f| on the clean circle separates from |f| on a radially offset copy.
    #[test]
    fn circle_fixture_level_set_separation() {
        let clean = synthetic_circle(256, 45);
        let obs = make_observation_set(&clean, 8, 0.02, 46).unwrap();
        let cfg = TrainConfig {
            batch_size: 128,
            iterations: 5000,
            k_neighbor: 50,
            hidden_layers: 3,
            hidden_width: 32,
            seed: 5,
            ..TrainConfig::default()
        };
        let state = train(&obs, &cfg, &mut |_, _| {}).unwrap();

        let mean_abs_f = |points: &[Point3]| -> f64 {
            points
                .iter()
                .map(|&p| state.network.eval(p).value.abs())
                .sum::<f64>()
                / points.len() as f64
        };
        let on_circle = mean_abs_f(&clean.points);
        let offset: Vec<Point3> = clean.points.iter().map(|&p| p * 1.1).collect();
        let off_circle = mean_abs_f(&offset);
        assert!(
            on_circle < off_circle,
            "|f| on circle {on_circle} vs offset {off_circle}"
        );
    }

    /// The smoothed training loss drops by well over 10% on a sphere
    /// fixture.
    #[test]
    fn smoothed_loss_decreases() {
        let clean = synthetic_sphere(512, 47);
        let obs = make_observation_set(&clean, 1, 0.02, 48).unwrap();
        let cfg = TrainConfig {
            batch_size: 64,
            iterations: 1500,
            mode: TrainMode::SingleObservation,
            hidden_layers: 3,
            hidden_width: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let state = train(&obs, &cfg, &mut |_, _| {}).unwrap();
        let window = 100;
        let head: f64 = state.history[..window].iter().map(|b| b.total).sum::<f64>() / window as f64;
        let tail: f64 = state.history[state.history.len() - window..]
            .iter()
            .map(|b| b.total)
            .sum::<f64>()
            / window as f64;
        assert!(
            tail <= 0.9 * head,
            "smoothed loss did not drop 10%: head {head}, tail {tail}"
        );
    }
}

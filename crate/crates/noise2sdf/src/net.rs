//! The SDF network: a fully connected net mapping a 3D query to one signed
//! distance, squashed by `tanh` so the output always lies in (-1, 1).
//!
//! [`SdfNetwork::eval`] returns both the value and the exact input gradient
//! obtained by running the chain rule backward over the stored
//! pre-activations. The same arithmetic, expressed as recorded tape
//! operations, lives in [`crate::tape`]; both paths share the mat-vec
//! helpers below so they agree bit-for-bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Point3;

/// Elementwise activation. The hidden default is softplus: the pull operator
/// consumes the field gradient, so the field should be differentiable
/// everywhere. ReLU stays available for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative.
    pub fn prime(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative (zero almost everywhere for ReLU).
    pub fn second(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Softplus => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Activation> {
        match tag {
            0 => Some(Activation::Softplus),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One dense layer, weights row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// `out = W x`.
pub(crate) fn matvec(w: &[f64], x: &[f64], out_dim: usize, in_dim: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim);
    debug_assert_eq!(out.len(), out_dim);
    for i in 0..out_dim {
        let row = &w[i * in_dim..(i + 1) * in_dim];
        let mut acc = 0.0;
        for j in 0..in_dim {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

/// `out = W^T x` (accumulating row by row keeps the weight access
/// sequential).
pub(crate) fn matvec_t(w: &[f64], x: &[f64], out_dim: usize, in_dim: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), out_dim);
    debug_assert_eq!(out.len(), in_dim);
    out.fill(0.0);
    for i in 0..out_dim {
        let row = &w[i * in_dim..(i + 1) * in_dim];
        let xi = x[i];
        for j in 0..in_dim {
            out[j] += row[j] * xi;
        }
    }
}

/// Feedforward SDF network: input width 3, hidden layers of equal width,
/// scalar output through `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfNetwork {
    pub layers: Vec<DenseLayer>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Value and exact input gradient of the field at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub value: f64,
    pub input_gradient: Point3,
}

/// Reusable buffers for repeated evaluations (grids, denoising loops).
#[derive(Debug, Default, Clone)]
pub struct NetScratch {
    acts: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    v: Vec<f64>,
    u: Vec<f64>,
}

impl SdfNetwork {
    /// Builds a network with `hidden_layers` layers of `hidden_width` units,
    /// weights and biases drawn from the fan-in-scaled uniform distribution
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. Deterministic given `seed`.
    pub fn init(hidden_layers: usize, hidden_width: usize, seed: u64) -> Result<SdfNetwork> {
        Self::init_with_activation(hidden_layers, hidden_width, Activation::Softplus, seed)
    }

    pub fn init_with_activation(
        hidden_layers: usize,
        hidden_width: usize,
        hidden_activation: Activation,
        seed: u64,
    ) -> Result<SdfNetwork> {
        if hidden_layers < 1 || hidden_width < 1 {
            return Err(Error::invalid(
                "network needs at least one hidden layer of width one",
            ));
        }
        let mut widths = Vec::with_capacity(hidden_layers + 2);
        widths.push(3);
        widths.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        widths.push(1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w = (0..out_dim * in_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(DenseLayer {
                w,
                b,
                in_dim,
                out_dim,
            });
        }
        Ok(SdfNetwork {
            layers,
            hidden_activation,
            output_activation: Activation::Tanh,
        })
    }

    /// Layer widths including input (3) and output (1).
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].in_dim];
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Value and input gradient at `q`, using caller-provided scratch.
    pub fn eval_with(&self, scratch: &mut NetScratch, q: Point3) -> EvalResult {
        let n_layers = self.layers.len();
        scratch.acts.resize(n_layers + 1, Vec::new());
        scratch.zs.resize(n_layers, Vec::new());

        scratch.acts[0].clear();
        scratch.acts[0].extend_from_slice(&[q.x, q.y, q.z]);

        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = scratch.acts.split_at_mut(l + 1);
            let a_in = &before[l];
            let z = &mut scratch.zs[l];
            z.resize(layer.out_dim, 0.0);
            matvec(&layer.w, a_in, layer.out_dim, layer.in_dim, z);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            let act = if l + 1 == n_layers {
                self.output_activation
            } else {
                self.hidden_activation
            };
            let a_out = &mut after[0];
            a_out.clear();
            a_out.extend(z.iter().map(|&zi| act.apply(zi)));
        }

        let value = scratch.acts[n_layers][0];

        // Reverse chain for the input gradient.
        let y = scratch.zs[n_layers - 1][0];
        scratch.v.clear();
        scratch.v.push(self.output_activation.prime(y));
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            if l + 1 != n_layers {
                // v holds d(output)/d(a_l); fold in the activation derivative.
                for (vi, &zi) in scratch.v.iter_mut().zip(&scratch.zs[l]) {
                    *vi *= self.hidden_activation.prime(zi);
                }
            }
            scratch.u.resize(layer.in_dim, 0.0);
            matvec_t(&layer.w, &scratch.v, layer.out_dim, layer.in_dim, &mut scratch.u);
            std::mem::swap(&mut scratch.v, &mut scratch.u);
        }
        let g = &scratch.v;
        EvalResult {
            value,
            input_gradient: Point3::new(g[0], g[1], g[2]),
        }
    }

    /// Convenience wrapper allocating its own scratch.
    pub fn eval(&self, q: Point3) -> EvalResult {
        let mut scratch = NetScratch::default();
        self.eval_with(&mut scratch, q)
    }

    /// Value only (no gradient chain) for dense grid sweeps.
    pub fn value_with(&self, scratch: &mut NetScratch, q: Point3) -> f64 {
        let n_layers = self.layers.len();
        scratch.acts.resize(n_layers + 1, Vec::new());
        scratch.zs.resize(n_layers, Vec::new());
        scratch.acts[0].clear();
        scratch.acts[0].extend_from_slice(&[q.x, q.y, q.z]);
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = scratch.acts.split_at_mut(l + 1);
            let a_in = &before[l];
            let z = &mut scratch.zs[l];
            z.resize(layer.out_dim, 0.0);
            matvec(&layer.w, a_in, layer.out_dim, layer.in_dim, z);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            let act = if l + 1 == n_layers {
                self.output_activation
            } else {
                self.hidden_activation
            };
            let a_out = &mut after[0];
            a_out.clear();
            a_out.extend(z.iter().map(|&zi| act.apply(zi)));
        }
        scratch.acts[n_layers][0]
    }

    /// Checked evaluation: rejects non-finite queries.
    pub fn forward(&self, q: Point3) -> Result<EvalResult> {
        if !q.is_finite() {
            return Err(Error::invalid("query point must be finite"));
        }
        Ok(self.eval(q))
    }
}

/// Anything that evaluates to a signed distance with a gradient: the
/// trained network, or analytic fields in tests and demos.
pub trait SdfField {
    fn eval_at(&self, q: Point3) -> EvalResult;

    fn value_at(&self, q: Point3) -> f64 {
        self.eval_at(q).value
    }

    /// Batched values; implementations may reuse buffers across queries.
    fn values_into(&self, queries: &[Point3], out: &mut Vec<f64>) {
        out.clear();
        out.extend(queries.iter().map(|&q| self.value_at(q)));
    }
}

impl SdfField for SdfNetwork {
    fn eval_at(&self, q: Point3) -> EvalResult {
        self.eval(q)
    }

    fn value_at(&self, q: Point3) -> f64 {
        let mut scratch = NetScratch::default();
        self.value_with(&mut scratch, q)
    }

    fn values_into(&self, queries: &[Point3], out: &mut Vec<f64>) {
        let mut scratch = NetScratch::default();
        out.clear();
        out.extend(queries.iter().map(|&q| self.value_with(&mut scratch, q)));
    }
}

/// Per-parameter gradients, shaped exactly like the network.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone)]
pub struct LayerGradient {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros_like(net: &SdfNetwork) -> ParamGradients {
        ParamGradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::stream_rng;
    use rand::Rng;

    fn random_query(rng: &mut rand_chacha::ChaCha8Rng) -> Point3 {
        Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    #[test]
    fn init_produces_requested_architecture() {
        let net = SdfNetwork::init(8, 256, 42).unwrap();
        assert_eq!(net.widths(), {
            let mut w = vec![3];
            w.extend(vec![256; 8]);
            w.push(1);
            w
        });
        assert_eq!(net.hidden_layer_count(), 8);
    }

    #[test]
    fn minimal_network_is_finite_everywhere() {
        let net = SdfNetwork::init(1, 1, 0).unwrap();
        for q in [
            Point3::ZERO,
            Point3::new(1e6, -1e6, 3.0),
            Point3::new(-1.0, 2.0, -3.0),
        ] {
            let r = net.eval(q);
            assert!(r.value.is_finite());
            assert!(r.input_gradient.is_finite());
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = SdfNetwork::init(3, 16, 7).unwrap();
        let b = SdfNetwork::init(3, 16, 7).unwrap();
        assert_eq!(a, b);
        let c = SdfNetwork::init(3, 16, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_weight_network_is_constant() {
        let mut net = SdfNetwork::init(2, 8, 1).unwrap();
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let bias = 0.37;
        net.layers.last_mut().unwrap().b[0] = bias;
        let r = net.eval(Point3::new(0.3, -0.8, 0.1));
        assert_eq!(r.value, bias.tanh());
        assert_eq!(r.input_gradient, Point3::ZERO);
    }

    #[test]
    fn output_range_is_open_unit_interval() {
        let mut rng = stream_rng(31, 0);
        for trial in 0..50 {
            let net = SdfNetwork::init(1 + trial % 4, 1 + trial % 17, trial as u64).unwrap();
            let q = random_query(&mut rng) * 2.0;
            let v = net.eval(q).value;
            assert!(v > -1.0 && v < 1.0, "value {v} outside (-1,1)");
        }
        // Far outside the working domain tanh saturates; even there the
        // value never escapes [-1, 1].
        let net = SdfNetwork::init(2, 8, 99).unwrap();
        let v = net.eval(Point3::new(1e9, -1e9, 1e9)).value;
        assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        // Central differences with h = 1e-4 over 100 random (net, query)
        // pairs; relative error below 1e-4 in f64.
        let mut rng = stream_rng(5, 0);
        let h = 1e-4;
        for trial in 0..100u64 {
            let net = SdfNetwork::init(1 + (trial % 3) as usize, 8 + (trial % 9) as usize, trial)
                .unwrap();
            let q = random_query(&mut rng);
            let g = net.eval(q).input_gradient;
            let mut fd = [0.0; 3];
            for axis in 0..3 {
                let mut dp = q;
                let mut dm = q;
                match axis {
                    0 => {
                        dp.x += h;
                        dm.x -= h;
                    }
                    1 => {
                        dp.y += h;
                        dm.y -= h;
                    }
                    _ => {
                        dp.z += h;
                        dm.z -= h;
                    }
                }
                fd[axis] = (net.eval(dp).value - net.eval(dm).value) / (2.0 * h);
            }
            let fd = Point3::new(fd[0], fd[1], fd[2]);
            let err = (g - fd).norm();
            let scale = g.norm().max(fd.norm()).max(1e-12);
            assert!(
                err / scale < 1e-4,
                "trial {trial}: rel err {} (grad {g:?}, fd {fd:?})",
                err / scale
            );
        }
    }

    #[test]
    fn eval_rejects_non_finite_queries() {
        let net = SdfNetwork::init(1, 4, 0).unwrap();
        assert!(net.forward(Point3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(net.forward(Point3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn value_only_path_matches_eval() {
        let net = SdfNetwork::init(3, 24, 9).unwrap();
        let mut scratch = NetScratch::default();
        let mut rng = stream_rng(10, 0);
        for _ in 0..50 {
            let q = random_query(&mut rng);
            assert_eq!(net.value_with(&mut scratch, q), net.eval(q).value);
        }
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [Activation::Softplus, Activation::Tanh] {
            for x in [-3.0, -0.7, 0.0, 0.4, 2.5, 20.0, -20.0] {
                let fd1 = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((act.prime(x) - fd1).abs() < 1e-8, "{act:?} prime at {x}");
                let fd2 = (act.prime(x + h) - act.prime(x - h)) / (2.0 * h);
                assert!((act.second(x) - fd2).abs() < 1e-8, "{act:?} second at {x}");
            }
        }
    }
}

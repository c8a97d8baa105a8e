//! Define-by-run tape for the loss forms used in training.
//!
//! The tape records primal vector operations against a fixed network. The
//! input gradient of the field is itself recorded as primal operations (the
//! backward chain unrolled forward: transposed mat-vecs and activation
//! derivatives), so a single reverse sweep over the extended graph yields
//! exact parameter gradients of any recorded function of both the field
//! value and its input gradient. This is deliberately not a general autodiff
//! system: the op set covers the fixed MLP family plus the distance, norm
//! and hinge arithmetic the losses need.

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::net::{matvec, matvec_t, Activation, ParamGradients, SdfNetwork};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Leaf holding a constant vector.
    Const,
    /// `W_layer * x`.
    MatVec { layer: u32, x: NodeId },
    /// `W_layer^T * x`.
    MatVecT { layer: u32, x: NodeId },
    /// `x + b_layer`.
    AddBias { layer: u32, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    /// Elementwise `act(x)`.
    Act { kind: Activation, x: NodeId },
    /// Elementwise `act'(x)`; differentiating it uses `act''`.
    ActPrime { kind: Activation, x: NodeId },
    /// Scalar `s` times vector `x`.
    ScaleVec { s: NodeId, x: NodeId },
    /// Elementwise multiply by a constant.
    ScaleConst { x: NodeId, c: f64 },
    /// Add a constant to a scalar (the constant is folded into the primal
    /// value; the derivative does not need it).
    AddConst { x: NodeId },
    Dot { a: NodeId, b: NodeId },
    /// `max(||x||_2, clamp)`; gradient is zero on the clamped branch and the
    /// zero-norm subgradient is zero.
    Norm { x: NodeId, clamp: f64 },
    ScalarMul { a: NodeId, b: NodeId },
    ScalarRecip { a: NodeId },
    ScalarAbs { a: NodeId },
    /// `max(0, x)`.
    Hinge { a: NodeId },
    /// Sum of scalar children stored in the side list.
    Sum { start: u32, count: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    off: u32,
    len: u32,
}

/// Field value and input gradient recorded on the tape for one query.
#[derive(Debug, Clone, Copy)]
pub struct TapeEval {
    /// Scalar node: the signed distance.
    pub value: NodeId,
    /// Length-3 node: the input gradient of the field.
    pub gradient: NodeId,
}

/// Recorded computation over one network. Cleared and refilled each
/// training iteration; buffers keep their capacity.
pub struct Tape<'n> {
    net: &'n SdfNetwork,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    sum_children: Vec<NodeId>,
}

impl<'n> Tape<'n> {
    pub fn new(net: &'n SdfNetwork) -> Tape<'n> {
        Tape {
            net,
            nodes: Vec::new(),
            vals: Vec::new(),
            sum_children: Vec::new(),
        }
    }

    pub fn net(&self) -> &SdfNetwork {
        self.net
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.sum_children.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Primal value of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0 as usize];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    /// Primal value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn point(&self, id: NodeId) -> Point3 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 3);
        Point3::new(v[0], v[1], v[2])
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        let off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, 0.0);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            off,
            len: len as u32,
        });
        id
    }

    fn slice_mut(&mut self, id: NodeId) -> &mut [f64] {
        let n = self.nodes[id.0 as usize];
        &mut self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    fn two(&mut self, a: NodeId, b: NodeId, op: Op, len: usize) -> NodeId {
        debug_assert_eq!(self.value(a).len(), self.value(b).len());
        let id = self.push(op, len);
        let (na, nb, nid) = (
            self.nodes[a.0 as usize],
            self.nodes[b.0 as usize],
            self.nodes[id.0 as usize],
        );
        let (off_a, off_b, off) = (na.off as usize, nb.off as usize, nid.off as usize);
        for k in 0..len {
            let va = self.vals[off_a + k];
            let vb = self.vals[off_b + k];
            self.vals[off + k] = match op {
                Op::Add { .. } => va + vb,
                Op::Sub { .. } => va - vb,
                Op::Hadamard { .. } => va * vb,
                _ => unreachable!(),
            };
        }
        id
    }

    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        let id = self.push(Op::Const, values.len());
        self.slice_mut(id).copy_from_slice(values);
        id
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(&[v])
    }

    pub fn constant_point(&mut self, p: Point3) -> NodeId {
        self.constant(&[p.x, p.y, p.z])
    }

    pub fn matvec(&mut self, layer: usize, x: NodeId) -> NodeId {
        let l = &self.net.layers[layer];
        debug_assert_eq!(self.value(x).len(), l.in_dim);
        let id = self.push(
            Op::MatVec {
                layer: layer as u32,
                x,
            },
            l.out_dim,
        );
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        let (vals_x, vals_out) = split_two(
            &mut self.vals,
            nx.off as usize,
            nx.len as usize,
            nid.off as usize,
            nid.len as usize,
        );
        matvec(&l.w, vals_x, l.out_dim, l.in_dim, vals_out);
        id
    }

    pub fn matvec_t(&mut self, layer: usize, x: NodeId) -> NodeId {
        let l = &self.net.layers[layer];
        debug_assert_eq!(self.value(x).len(), l.out_dim);
        let id = self.push(
            Op::MatVecT {
                layer: layer as u32,
                x,
            },
            l.in_dim,
        );
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        let (vals_x, vals_out) = split_two(
            &mut self.vals,
            nx.off as usize,
            nx.len as usize,
            nid.off as usize,
            nid.len as usize,
        );
        matvec_t(&l.w, vals_x, l.out_dim, l.in_dim, vals_out);
        id
    }

    pub fn add_bias(&mut self, layer: usize, x: NodeId) -> NodeId {
        let l = &self.net.layers[layer];
        debug_assert_eq!(self.value(x).len(), l.out_dim);
        let id = self.push(
            Op::AddBias {
                layer: layer as u32,
                x,
            },
            l.out_dim,
        );
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        for k in 0..nid.len as usize {
            self.vals[nid.off as usize + k] = self.vals[nx.off as usize + k] + l.b[k];
        }
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.value(a).len();
        self.two(a, b, Op::Add { a, b }, len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.value(a).len();
        self.two(a, b, Op::Sub { a, b }, len)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.value(a).len();
        self.two(a, b, Op::Hadamard { a, b }, len)
    }

    pub fn act(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let len = self.value(x).len();
        let id = self.push(Op::Act { kind, x }, len);
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        for k in 0..len {
            self.vals[nid.off as usize + k] = kind.apply(self.vals[nx.off as usize + k]);
        }
        id
    }

    pub fn act_prime(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let len = self.value(x).len();
        let id = self.push(Op::ActPrime { kind, x }, len);
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        for k in 0..len {
            self.vals[nid.off as usize + k] = kind.prime(self.vals[nx.off as usize + k]);
        }
        id
    }

    pub fn scale_vec(&mut self, s: NodeId, x: NodeId) -> NodeId {
        debug_assert_eq!(self.value(s).len(), 1);
        let len = self.value(x).len();
        let id = self.push(Op::ScaleVec { s, x }, len);
        let sv = self.scalar(s);
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        for k in 0..len {
            self.vals[nid.off as usize + k] = sv * self.vals[nx.off as usize + k];
        }
        id
    }

    pub fn scale_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let len = self.value(x).len();
        let id = self.push(Op::ScaleConst { x, c }, len);
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        for k in 0..len {
            self.vals[nid.off as usize + k] = c * self.vals[nx.off as usize + k];
        }
        id
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        debug_assert_eq!(self.value(x).len(), 1);
        let id = self.push(Op::AddConst { x }, 1);
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        self.vals[nid.off as usize] = self.vals[nx.off as usize] + c;
        id
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).len(), self.value(b).len());
        let id = self.push(Op::Dot { a, b }, 1);
        let na = self.nodes[a.0 as usize];
        let nb = self.nodes[b.0 as usize];
        let nid = self.nodes[id.0 as usize];
        let mut acc = 0.0;
        for k in 0..na.len as usize {
            acc += self.vals[na.off as usize + k] * self.vals[nb.off as usize + k];
        }
        self.vals[nid.off as usize] = acc;
        id
    }

    /// `max(||x||, clamp)`. With `clamp = 0` this is the plain norm with a
    /// zero subgradient at the origin.
    pub fn norm(&mut self, x: NodeId, clamp: f64) -> NodeId {
        let id = self.push(Op::Norm { x, clamp }, 1);
        let nx = self.nodes[x.0 as usize];
        let nid = self.nodes[id.0 as usize];
        let mut acc = 0.0;
        for k in 0..nx.len as usize {
            let v = self.vals[nx.off as usize + k];
            acc += v * v;
        }
        self.vals[nid.off as usize] = acc.sqrt().max(clamp);
        id
    }

    pub fn scalar_mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let id = self.push(Op::ScalarMul { a, b }, 1);
        let v = self.scalar(a) * self.scalar(b);
        self.slice_mut(id)[0] = v;
        id
    }

    pub fn scalar_recip(&mut self, a: NodeId) -> NodeId {
        let id = self.push(Op::ScalarRecip { a }, 1);
        let v = 1.0 / self.scalar(a);
        self.slice_mut(id)[0] = v;
        id
    }

    pub fn scalar_abs(&mut self, a: NodeId) -> NodeId {
        let id = self.push(Op::ScalarAbs { a }, 1);
        let v = self.scalar(a).abs();
        self.slice_mut(id)[0] = v;
        id
    }

    pub fn hinge(&mut self, a: NodeId) -> NodeId {
        let id = self.push(Op::Hinge { a }, 1);
        let v = self.scalar(a).max(0.0);
        self.slice_mut(id)[0] = v;
        id
    }

    /// Sum of scalar nodes, accumulated in the given order.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let start = self.sum_children.len() as u32;
        self.sum_children.extend_from_slice(terms);
        let id = self.push(
            Op::Sum {
                start,
                count: terms.len() as u32,
            },
            1,
        );
        let mut acc = 0.0;
        for &t in terms {
            acc += self.scalar(t);
        }
        self.slice_mut(id)[0] = acc;
        id
    }

    /// Records the full field evaluation at `q`: the forward pass and the
    /// input gradient unrolled as primal operations.
    pub fn network_eval(&mut self, q: Point3) -> TapeEval {
        let n_layers = self.net.layers.len();
        let hidden = self.net.hidden_activation;
        let output = self.net.output_activation;

        let mut a = self.constant_point(q);
        let mut zs = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let lin = self.matvec(l, a);
            let z = self.add_bias(l, lin);
            zs.push(z);
            let act = if l + 1 == n_layers { output } else { hidden };
            a = self.act(act, z);
        }
        let value = a;

        // Unrolled gradient chain: v_H = W_out^T tanh'(y); then per hidden
        // layer v_{l-1} = W_l^T (v_l .* act'(z_l)).
        let t = self.act_prime(output, zs[n_layers - 1]);
        let mut v = self.matvec_t(n_layers - 1, t);
        for l in (0..n_layers - 1).rev() {
            let p = self.act_prime(hidden, zs[l]);
            let u = self.hadamard(v, p);
            v = self.matvec_t(l, u);
        }
        TapeEval { value, gradient: v }
    }

    /// One reverse sweep from the scalar `root`, accumulating exact
    /// parameter gradients (including paths through recorded input
    /// gradients).
    pub fn backward_params(&self, root: NodeId) -> Result<ParamGradients> {
        let root_node = &self.nodes[root.0 as usize];
        if root_node.len != 1 {
            return Err(Error::invalid(
                "backward pass needs a scalar loss at the root",
            ));
        }
        let mut adj = vec![0.0; self.vals.len()];
        adj[root_node.off as usize] = 1.0;
        let mut grads = ParamGradients::zeros_like(self.net);

        for idx in (0..=root.0 as usize).rev() {
            let node = self.nodes[idx];
            let g_range = node.off as usize..(node.off + node.len) as usize;
            // Skip nodes with no incoming adjoint.
            if adj[g_range.clone()].iter().all(|&g| g == 0.0) {
                continue;
            }
            match node.op {
                Op::Const => {}
                Op::MatVec { layer, x } => {
                    let l = &self.net.layers[layer as usize];
                    let nx = self.nodes[x.0 as usize];
                    let lg = &mut grads.layers[layer as usize];
                    for i in 0..l.out_dim {
                        let gi = adj[node.off as usize + i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut lg.w[i * l.in_dim..(i + 1) * l.in_dim];
                        for j in 0..l.in_dim {
                            row[j] += gi * self.vals[nx.off as usize + j];
                        }
                    }
                    for i in 0..l.out_dim {
                        let gi = adj[node.off as usize + i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &l.w[i * l.in_dim..(i + 1) * l.in_dim];
                        for j in 0..l.in_dim {
                            adj[nx.off as usize + j] += row[j] * gi;
                        }
                    }
                }
                Op::MatVecT { layer, x } => {
                    // y = W^T x: dW[i][j] += x_i g_j, dx_i += (W g)_i.
                    let l = &self.net.layers[layer as usize];
                    let nx = self.nodes[x.0 as usize];
                    let lg = &mut grads.layers[layer as usize];
                    for i in 0..l.out_dim {
                        let xi = self.vals[nx.off as usize + i];
                        let row = &mut lg.w[i * l.in_dim..(i + 1) * l.in_dim];
                        for j in 0..l.in_dim {
                            row[j] += xi * adj[node.off as usize + j];
                        }
                    }
                    for i in 0..l.out_dim {
                        let row = &l.w[i * l.in_dim..(i + 1) * l.in_dim];
                        let mut acc = 0.0;
                        for j in 0..l.in_dim {
                            acc += row[j] * adj[node.off as usize + j];
                        }
                        adj[nx.off as usize + i] += acc;
                    }
                }
                Op::AddBias { layer, x } => {
                    let nx = self.nodes[x.0 as usize];
                    let lg = &mut grads.layers[layer as usize];
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        lg.b[k] += g;
                        adj[nx.off as usize + k] += g;
                    }
                }
                Op::Add { a, b } => {
                    let (na, nb) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        adj[na.off as usize + k] += g;
                        adj[nb.off as usize + k] += g;
                    }
                }
                Op::Sub { a, b } => {
                    let (na, nb) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        adj[na.off as usize + k] += g;
                        adj[nb.off as usize + k] -= g;
                    }
                }
                Op::Hadamard { a, b } => {
                    let (na, nb) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        adj[na.off as usize + k] += g * self.vals[nb.off as usize + k];
                        adj[nb.off as usize + k] += g * self.vals[na.off as usize + k];
                    }
                }
                Op::Act { kind, x } => {
                    let nx = self.nodes[x.0 as usize];
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        let xv = self.vals[nx.off as usize + k];
                        adj[nx.off as usize + k] += g * kind.prime(xv);
                    }
                }
                Op::ActPrime { kind, x } => {
                    let nx = self.nodes[x.0 as usize];
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        let xv = self.vals[nx.off as usize + k];
                        adj[nx.off as usize + k] += g * kind.second(xv);
                    }
                }
                Op::ScaleVec { s, x } => {
                    let ns = self.nodes[s.0 as usize];
                    let nx = self.nodes[x.0 as usize];
                    let sv = self.vals[ns.off as usize];
                    let mut acc = 0.0;
                    for k in 0..node.len as usize {
                        let g = adj[node.off as usize + k];
                        acc += g * self.vals[nx.off as usize + k];
                        adj[nx.off as usize + k] += g * sv;
                    }
                    adj[ns.off as usize] += acc;
                }
                Op::ScaleConst { x, c } => {
                    let nx = self.nodes[x.0 as usize];
                    for k in 0..node.len as usize {
                        adj[nx.off as usize + k] += c * adj[node.off as usize + k];
                    }
                }
                Op::AddConst { x } => {
                    let nx = self.nodes[x.0 as usize];
                    adj[nx.off as usize] += adj[node.off as usize];
                }
                Op::Dot { a, b } => {
                    let g = adj[node.off as usize];
                    let (na, nb) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for k in 0..na.len as usize {
                        adj[na.off as usize + k] += g * self.vals[nb.off as usize + k];
                        adj[nb.off as usize + k] += g * self.vals[na.off as usize + k];
                    }
                }
                Op::Norm { x, clamp } => {
                    let g = adj[node.off as usize];
                    let nx = self.nodes[x.0 as usize];
                    let mut norm2 = 0.0;
                    for k in 0..nx.len as usize {
                        let v = self.vals[nx.off as usize + k];
                        norm2 += v * v;
                    }
                    let norm = norm2.sqrt();
                    if norm > clamp && norm > 0.0 {
                        for k in 0..nx.len as usize {
                            adj[nx.off as usize + k] += g * self.vals[nx.off as usize + k] / norm;
                        }
                    }
                }
                Op::ScalarMul { a, b } => {
                    let g = adj[node.off as usize];
                    let (na, nb) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    adj[na.off as usize] += g * self.vals[nb.off as usize];
                    adj[nb.off as usize] += g * self.vals[na.off as usize];
                }
                Op::ScalarRecip { a } => {
                    let g = adj[node.off as usize];
                    let na = self.nodes[a.0 as usize];
                    let av = self.vals[na.off as usize];
                    adj[na.off as usize] -= g / (av * av);
                }
                Op::ScalarAbs { a } => {
                    let g = adj[node.off as usize];
                    let na = self.nodes[a.0 as usize];
                    let av = self.vals[na.off as usize];
                    let s = if av > 0.0 {
                        1.0
                    } else if av < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    adj[na.off as usize] += g * s;
                }
                Op::Hinge { a } => {
                    let g = adj[node.off as usize];
                    let na = self.nodes[a.0 as usize];
                    if self.vals[na.off as usize] > 0.0 {
                        adj[na.off as usize] += g;
                    }
                }
                Op::Sum { start, count } => {
                    let g = adj[node.off as usize];
                    for k in 0..count as usize {
                        let child = self.sum_children[start as usize + k];
                        let nc = self.nodes[child.0 as usize];
                        adj[nc.off as usize] += g;
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Disjoint mutable/immutable views into the value arena: the input slice is
/// always recorded before the output slice.
fn split_two(
    vals: &mut [f64],
    off_in: usize,
    len_in: usize,
    off_out: usize,
    len_out: usize,
) -> (&[f64], &mut [f64]) {
    debug_assert!(off_in + len_in <= off_out);
    let (head, tail) = vals.split_at_mut(off_out);
    (&head[off_in..off_in + len_in], &mut tail[..len_out])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::stream_rng;
    use rand::Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
    }

    #[test]
    fn tape_forward_matches_plain_eval_bitwise() {
        let net = SdfNetwork::init(3, 20, 4).unwrap();
        let mut rng = stream_rng(6, 0);
        for _ in 0..30 {
            let q = Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let mut tape = Tape::new(&net);
            let ev = tape.network_eval(q);
            let plain = net.eval(q);
            assert_eq!(tape.scalar(ev.value), plain.value);
            let g = tape.point(ev.gradient);
            assert_eq!(g, plain.input_gradient);
        }
    }

    /// Loss = f(q)^2: first-order parameter gradients against central
    /// finite differences.
    #[test]
    fn value_squared_param_gradients_match_fd() {
        let net = SdfNetwork::init(2, 10, 11).unwrap();
        let q = Point3::new(0.3, -0.2, 0.55);
        let mut tape = Tape::new(&net);
        let ev = tape.network_eval(q);
        let loss = tape.scalar_mul(ev.value, ev.value);
        let grads = tape.backward_params(loss).unwrap();

        let f = |net: &SdfNetwork| {
            let v = net.eval(q).value;
            v * v
        };
        check_against_fd(&net, &grads, f, 1e-4);
    }

    /// Loss = ||grad f(q)||^2: the second-order path.
    #[test]
    fn gradient_norm_param_gradients_match_fd() {
        let net = SdfNetwork::init(3, 10, 13).unwrap();
        let q = Point3::new(-0.4, 0.1, 0.2);
        let mut tape = Tape::new(&net);
        let ev = tape.network_eval(q);
        let loss = tape.dot(ev.gradient, ev.gradient);
        let grads = tape.backward_params(loss).unwrap();

        let f = |net: &SdfNetwork| {
            let g = net.eval(q).input_gradient;
            g.dot(g)
        };
        check_against_fd(&net, &grads, f, 1e-3);
    }

    /// Loss through the pull arithmetic (norm clamp, scalar ops).
    #[test]
    fn pull_style_loss_matches_fd() {
        let net = SdfNetwork::init(2, 8, 17).unwrap();
        let q = Point3::new(0.2, 0.7, -0.3);
        let target = Point3::new(0.1, 0.6, -0.2);
        let build = |tape: &mut Tape| {
            let ev = tape.network_eval(q);
            let n = tape.norm(ev.gradient, 1e-8);
            let r = tape.scalar_recip(n);
            let s = tape.scalar_mul(ev.value, r);
            let step = tape.scale_vec(s, ev.gradient);
            let qc = tape.constant_point(q);
            let pulled = tape.sub(qc, step);
            let tc = tape.constant_point(target);
            let diff = tape.sub(pulled, tc);
            tape.norm(diff, 0.0)
        };
        let mut tape = Tape::new(&net);
        let loss = build(&mut tape);
        let grads = tape.backward_params(loss).unwrap();
        let f = |net: &SdfNetwork| {
            let mut tape = Tape::new(net);
            let root = build(&mut tape);
            tape.scalar(root)
        };
        check_against_fd(&net, &grads, f, 1e-3);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let net = SdfNetwork::init(2, 6, 3).unwrap();
        let mut tape = Tape::new(&net);
        let c = tape.constant_scalar(4.2);
        let loss = tape.scalar_mul(c, c);
        let grads = tape.backward_params(loss).unwrap();
        for l in &grads.layers {
            assert!(l.w.iter().all(|&g| g == 0.0));
            assert!(l.b.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let net = SdfNetwork::init(1, 4, 0).unwrap();
        let mut tape = Tape::new(&net);
        let v = tape.constant_point(Point3::new(1.0, 2.0, 3.0));
        assert!(tape.backward_params(v).is_err());
    }

    /// Central finite differences over every parameter (nets here are tiny).
    fn check_against_fd(
        net: &SdfNetwork,
        grads: &ParamGradients,
        f: impl Fn(&SdfNetwork) -> f64,
        tol: f64,
    ) {
        let h = 1e-5;
        for (li, layer) in net.layers.iter().enumerate() {
            for wi in 0..layer.w.len() {
                let mut plus = net.clone();
                plus.layers[li].w[wi] += h;
                let mut minus = net.clone();
                minus.layers[li].w[wi] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = grads.layers[li].w[wi];
                assert!(
                    rel_err(an, fd) < tol || (an - fd).abs() < 1e-8,
                    "layer {li} w[{wi}]: analytic {an}, fd {fd}"
                );
            }
            for bi in 0..layer.b.len() {
                let mut plus = net.clone();
                plus.layers[li].b[bi] += h;
                let mut minus = net.clone();
                minus.layers[li].b[bi] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = grads.layers[li].b[bi];
                assert!(
                    rel_err(an, fd) < tol || (an - fd).abs() < 1e-8,
                    "layer {li} b[{bi}]: analytic {an}, fd {fd}"
                );
            }
        }
    }
}

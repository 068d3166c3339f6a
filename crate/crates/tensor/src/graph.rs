//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node that refers only to
//! earlier nodes, so node order is already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Parameters from a
//! [`ParamStore`] enter the tape once per graph through [`Graph::param`];
//! using the same parameter twice yields the same node, which is how
//! weight sharing is expressed.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{axis_extents, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Sum(Var),
    MeanAxis { x: Var, axis: usize },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu(Var),
    Embedding { table: Var, indices: Vec<usize> },
    Conv1d { x: Var, w: Var, b: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Cosine { a: Var, b: Var, norms: Vec<(f64, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    param: Option<ParamId>,
}

/// A single-threaded autodiff tape.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::Shape {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

impl Graph {
    /// An inference-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            backward_done: false,
        }
    }

    /// A training-mode graph whose dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// A value that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf that receives gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        Ok(self.param(store, store.id(name)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", &[av.shape(), bv.shape()]));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("sub", &[av.shape(), bv.shape()]));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", &[av.shape(), bv.shape()]));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a vector of length `last_dim(x)` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = *xv.shape().last().unwrap();
        if bv.shape() != [n] {
            return Err(shape_err("add_row", &[xv.shape(), bv.shape()]));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Scale(x, c), rg))
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(shape_err("matmul", &[av.shape(), bv.shape()])),
        };
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    /// Batched matmul `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (bs, m, k, n) = match (av.shape(), bv.shape()) {
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(shape_err("bmm", &[av.shape(), bv.shape()])),
        };
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm_acc(
                &av.data()[i * m * k..(i + 1) * m * k],
                &bv.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let t = Tensor::new(vec![bs, m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Bmm(a, b), rg))
    }

    /// Swaps the last two axes (2-D or 3-D input).
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (bs, r, c) = match xv.shape() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            s => return Err(shape_err("transpose", &[s])),
        };
        let out = transpose_data(xv.data(), bs, r, c);
        let mut shape = xv.shape().to_vec();
        let nd = shape.len();
        shape.swap(nd - 2, nd - 1);
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || len == 0 || start + len > xv.shape()[axis] {
            return Err(shape_err("narrow", &[xv.shape(), &[axis, start, len]]));
        }
        let (outer, alen, inner) = axis_extents(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Narrow { x, axis, start }, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*inputs.first().ok_or_else(|| TensorError::Argument {
            op: "concat",
            reason: "no inputs".into(),
        })?);
        let base_shape = first.shape().to_vec();
        if axis >= base_shape.len() {
            return Err(shape_err("concat", &[&base_shape]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                let shapes: Vec<&[usize]> = inputs.iter().map(|&v| self.shape(v)).collect();
                return Err(shape_err("concat", &shapes));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape.to_vec();
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Mean along `axis`; the axis is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(shape_err("mean_axis", &[xv.shape()]));
        }
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xv.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let t = Tensor::new(Self::reduced_shape(xv.shape(), axis), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MeanAxis { x, axis }, rg))
    }

    /// Maximum along `axis`; the axis is removed. Ties route the gradient to
    /// the first maximal element.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(shape_err("max_axis", &[xv.shape()]));
        }
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let v = xv.data()[(o * len + a) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        argmax[o * inner + i] = a;
                    }
                }
            }
        }
        let t = Tensor::new(Self::reduced_shape(xv.shape(), axis), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaxAxis { x, axis, argmax }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(shape_err("softmax", &[xv.shape()]));
        }
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mx = (0..len).map(|a| out[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..len {
                    let e = (out[idx(a)] - mx).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[idx(a)] /= z;
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(shape_err("log_softmax", &[xv.shape()]));
        }
        let (outer, len, inner) = axis_extents(xv.shape(), axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mx = (0..len).map(|a| out[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + (0..len).map(|a| (out[idx(a)] - mx).exp()).sum::<f64>().ln();
                for a in 0..len {
                    out[idx(a)] -= lse;
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmax { x, axis }, rg))
    }

    /// Layer normalisation over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err(
                "layer_norm",
                &[xv.shape(), self.shape(gamma), self.shape(beta)],
            ));
        }
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for (h, v) in xhat[r * n..(r + 1) * n].iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| h * g[i % n] + b[i % n])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v.max(0.0)).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Relu(x), rg))
    }

    /// Gathers rows of a `[V, d]` table; output is `[indices.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = match tv.shape() {
            [v, d] => (*v, *d),
            s => return Err(shape_err("embedding_lookup", &[s])),
        };
        if indices.is_empty() {
            return Err(TensorError::Argument {
                op: "embedding_lookup",
                reason: "empty index list".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(TensorError::Argument {
                op: "embedding_lookup",
                reason: format!("index {bad} out of range for table of {v} rows"),
            });
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![indices.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Valid-padding 1-D convolution: `x [B,L,Cin]`, `w [K,Cin,Cout]`,
    /// `b [Cout]` give `[B, L-K+1, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (bs, l, cin, k, cout) = match (xv.shape(), wv.shape(), bv.shape()) {
            ([bs, l, c], [k, c2, o], [o2]) if c == c2 && o == o2 && k <= l => {
                (*bs, *l, *c, *k, *o)
            }
            _ => return Err(shape_err("conv1d", &[xv.shape(), wv.shape(), bv.shape()])),
        };
        let lo = l - k + 1;
        let mut out = vec![0.0; bs * lo * cout];
        for bi in 0..bs {
            for t in 0..lo {
                let dst = &mut out[(bi * lo + t) * cout..(bi * lo + t + 1) * cout];
                dst.copy_from_slice(bv.data());
                // The window x[t..t+k, :] is contiguous and w is [k*cin, cout].
                let win = &xv.data()[(bi * l + t) * cin..(bi * l + t + k) * cin];
                gemm_acc(win, wv.data(), dst, 1, k * cin, cout);
            }
        }
        let t = Tensor::new(vec![bs, lo, cout], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Conv1d { x, w, b }, rg))
    }

    /// Inverted dropout: keeps each element with probability `keep_prob`
    /// and rescales by `1/keep_prob`. Identity outside training mode.
    pub fn dropout(&mut self, x: Var, keep_prob: f64) -> Result<Var> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(TensorError::Argument {
                op: "dropout",
                reason: format!("keep probability {keep_prob} outside (0, 1]"),
            });
        }
        if !self.training || keep_prob >= 1.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep_prob {
                    1.0 / keep_prob
                } else {
                    0.0
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Row-wise cosine similarity of two `[n, d]` inputs, shape `[n, 1]`.
    /// Rows where either side has zero norm give 0 with zero gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, d) = match (av.shape(), bv.shape()) {
            ([n, d], [n2, d2]) if n == n2 && d == d2 => (*n, *d),
            _ => return Err(shape_err("cosine_rows", &[av.shape(), bv.shape()])),
        };
        let mut out = vec![0.0; n];
        let mut norms = Vec::with_capacity(n);
        for r in 0..n {
            let ra = &av.data()[r * d..(r + 1) * d];
            let rb = &bv.data()[r * d..(r + 1) * d];
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 {
                out[r] = ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            }
            norms.push((na, nb));
        }
        let t = Tensor::new(vec![n, 1], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Cosine { a, b, norms }, rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    /// Clears every gradient so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Gradients of every parameter that entered this graph, by store id.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Runs `f` on the gradient buffer of `v` (zeros if it has none yet).
    /// The buffer is detached while `f` runs, so `f` may read any value.
    fn with_grad<F: FnOnce(&Self, &mut [f64])>(&mut self, v: Var, f: F) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let len = node.value.len();
        let mut s = node.grad.take().unwrap_or_else(|| vec![0.0; len]);
        f(self, &mut s);
        self.nodes[v.0].grad = Some(s);
    }

    /// Adds `c * g` to the gradient of `v`, copying instead of adding on first use.
    fn add_grad(&mut self, v: Var, g: &[f64], c: f64) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(s) => s.iter_mut().zip(g).for_each(|(d, x)| *d += c * x),
            None => node.grad = Some(g.iter().map(|x| c * x).collect()),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Take the op out temporarily so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, g, 1.0);
                self.add_grad(*b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, g, 1.0);
                self.add_grad(*b, g, -1.0);
            }
            Op::Mul(a, b) => {
                self.with_grad(*a, |t, s| {
                    let bv = t.value(*b).data();
                    s.iter_mut().zip(g).zip(bv).for_each(|((d, x), y)| *d += x * y);
                });
                self.with_grad(*b, |t, s| {
                    let av = t.value(*a).data();
                    s.iter_mut().zip(g).zip(av).for_each(|((d, x), y)| *d += x * y);
                });
            }
            Op::AddRow(x, bias) => {
                self.add_grad(*x, g, 1.0);
                self.with_grad(*bias, |_, s| {
                    let n = s.len();
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::Scale(x, c) => self.add_grad(*x, g, *c),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                self.with_grad(*a, |t, s| gemm_nt_acc(g, t.value(*b).data(), s, m, n, k));
                self.with_grad(*b, |t, s| gemm_tn_acc(t.value(*a).data(), g, s, m, k, n));
            }
            Op::Bmm(a, b) => {
                let (bs, m, k) = (self.shape(*a)[0], self.shape(*a)[1], self.shape(*a)[2]);
                let n = self.shape(*b)[2];
                self.with_grad(*a, |t, s| {
                    let bv = t.value(*b).data();
                    for i in 0..bs {
                        gemm_nt_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &bv[i * k * n..(i + 1) * k * n],
                            &mut s[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.with_grad(*b, |t, s| {
                    let av = t.value(*a).data();
                    for i in 0..bs {
                        gemm_tn_acc(
                            &av[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut s[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Transpose(x) => {
                let (bs, r, c) = match self.shape(*x) {
                    [r, c] => (1, *r, *c),
                    [b, r, c] => (*b, *r, *c),
                    _ => unreachable!(),
                };
                // g has shape [.., c, r]
                let gt = transpose_data(g, bs, c, r);
                self.add_grad(*x, &gt, 1.0);
            }
            Op::Reshape(x) => self.add_grad(*x, g, 1.0),
            Op::Narrow { x, axis, start } => {
                let (outer, alen, inner) = axis_extents(self.shape(*x), *axis);
                let len = g.len() / (outer * inner);
                self.with_grad(*x, |_, s| {
                    for o in 0..outer {
                        let base = o * alen * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        s[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_extents(self.shape(Var(idx)), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let w = self.shape(v)[*axis];
                    self.with_grad(v, |_, s| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + w) * inner];
                            s[o * w * inner..(o + 1) * w * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, x)| *d += x);
                        }
                    });
                    offset += w;
                }
            }
            Op::Sum(x) => self.with_grad(*x, |_, s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                self.with_grad(*x, |_, s| {
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                s[(o * len + a) * inner + i] += g[o * inner + i] / len as f64;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis { x, axis, argmax } => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                self.with_grad(*x, |_, s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let a = argmax[o * inner + i];
                            s[(o * len + a) * inner + i] += g[o * inner + i];
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                self.with_grad(*x, |t, s| {
                    let y = t.value(Var(idx)).data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + i;
                            let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                            for a in 0..len {
                                s[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                self.with_grad(*x, |t, s| {
                    let y = t.value(Var(idx)).data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + i;
                            let gs: f64 = (0..len).map(|a| g[idx(a)]).sum();
                            for a in 0..len {
                                s[idx(a)] += g[idx(a)] - y[idx(a)].exp() * gs;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.shape(*gamma)[0];
                self.with_grad(*beta, |_, s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
                self.with_grad(*gamma, |_, s| {
                    for (row, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            s[j] += row[j] * hrow[j];
                        }
                    }
                });
                self.with_grad(*x, |t, s| {
                    let gv = t.value(*gamma).data();
                    let mut gh = vec![0.0; n];
                    for (r, (row, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        gh.iter_mut().zip(row.iter().zip(gv)).for_each(|(o, (a, b))| *o = a * b);
                        let mean_gh = gh.iter().sum::<f64>() / n as f64;
                        let mean_ghh = gh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            s[r * n + j] += inv_std[r] * (gh[j] - mean_gh - hrow[j] * mean_ghh);
                        }
                    }
                });
            }
            Op::Relu(x) => {
                self.with_grad(*x, |t, s| {
                    let xv = t.value(*x).data();
                    for i in 0..s.len() {
                        if xv[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                self.with_grad(*table, |_, s| {
                    for (r, &i) in indices.iter().enumerate() {
                        s[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Conv1d { x, w, b } => {
                let (bs, l, cin) = {
                    let s = self.shape(*x);
                    (s[0], s[1], s[2])
                };
                let (k, cout) = (self.shape(*w)[0], self.shape(*w)[2]);
                let lo = l - k + 1;
                self.with_grad(*b, |_, s| {
                    for row in g.chunks(cout) {
                        s.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
                self.with_grad(*w, |t, s| {
                    let xv = t.value(*x).data();
                    for bi in 0..bs {
                        for p in 0..lo {
                            let win = &xv[(bi * l + p) * cin..(bi * l + p + k) * cin];
                            let go = &g[(bi * lo + p) * cout..(bi * lo + p + 1) * cout];
                            gemm_tn_acc(win, go, s, 1, k * cin, cout);
                        }
                    }
                });
                self.with_grad(*x, |t, s| {
                    let wv = t.value(*w).data();
                    for bi in 0..bs {
                        for p in 0..lo {
                            let go = &g[(bi * lo + p) * cout..(bi * lo + p + 1) * cout];
                            let dst = &mut s[(bi * l + p) * cin..(bi * l + p + k) * cin];
                            gemm_nt_acc(go, wv, dst, 1, cout, k * cin);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.with_grad(*x, |_, s| {
                    s.iter_mut().zip(g).zip(mask).for_each(|((d, v), m)| *d += v * m);
                });
            }
            Op::Cosine { a, b, norms } => {
                let d = self.shape(*a)[1];
                for (target, first) in [(*a, true), (*b, false)] {
                    self.with_grad(target, |t, s| {
                        let out = t.value(Var(idx)).data();
                        let (this, other) = if first {
                            (t.value(*a).data(), t.value(*b).data())
                        } else {
                            (t.value(*b).data(), t.value(*a).data())
                        };
                        for (r, &(na, nb)) in norms.iter().enumerate() {
                            if na == 0.0 || nb == 0.0 {
                                continue;
                            }
                            let (n_this, n_other) = if first { (na, nb) } else { (nb, na) };
                            let c = out[r];
                            for j in 0..d {
                                let tv = this[r * d + j];
                                let o = other[r * d + j];
                                s[r * d + j] += g[r] * (o / (n_this * n_other) - c * tv / (n_this * n_this));
                            }
                        }
                    });
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

fn transpose_data(data: &[f64], bs: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..bs {
        let src = &data[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

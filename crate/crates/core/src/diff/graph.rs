//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Values are stored
//! eagerly, so a forward pass is just a sequence of method calls; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! exact gradients for every parameter and variable that the loss reaches.
//!
//! All operations work row-wise: a rank-1 tensor is one row, a `[rows, cols]`
//! tensor is a batch. Parameters are borrowed from a [`ParamStore`] rather
//! than copied, and the gradients come back as an owned [`Gradients`] value
//! that the caller folds into the store once the graph is dropped.

use std::borrow::Cow;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    ConcatCols(Var, Var),
    RowSum(Var),
    Mean(Var),
    Pick(Var, Vec<usize>),
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    needs_grad: bool,
}

impl Node<'_> {
    fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    fn rows(&self) -> usize {
        self.value.len() / self.cols()
    }
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<Var>>,
    relu_signature: u64,
}

/// Result of a backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: Vec<Option<Vec<f64>>>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a parameter, or `None` when the loss does not reach it.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to any recorded node that needed one.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Collects the non-zero column indices into `buf`. Returns true when the row
/// is sparse enough that iterating them beats a dense dot product.
fn sparse_support(row: &[f64], buf: &mut Vec<usize>) -> bool {
    buf.clear();
    buf.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j));
    buf.len() * 3 < row.len()
}

fn row_shape(shape: &[usize], cols: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("non-empty shape") = cols;
    s
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(64),
            param_nodes: vec![None; store.len()],
            relu_signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shapes are valid")
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(Error::NotScalar(n.shape.clone()));
        }
        Ok(n.value[0])
    }

    /// Hash of the sign pattern of every relu input seen so far. Two
    /// evaluations with equal signatures lie on the same linear piece.
    pub fn activation_signature(&self) -> u64 {
        self.relu_signature
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_values()), Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_values()), Op::Leaf, true)
    }

    /// Copies the value of `x` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let (shape, value) = (n.shape.clone(), n.value.to_vec());
        self.push(shape, Cow::Owned(value), Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.push(
            p.tensor.shape().to_vec(),
            Cow::Borrowed(p.tensor.values()),
            Op::Param,
            p.trainable,
        );
        self.param_nodes[id.index()] = Some(v);
        v
    }

    /// `y = x Wᵀ + b` applied to each row of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xn, wn, bn) = (self.node(x), self.node(w), self.node(b));
        let n = xn.cols();
        if wn.shape.len() != 2 || wn.shape[1] != n {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: xn.shape.clone(),
                right: wn.shape.clone(),
            });
        }
        let m = wn.shape[0];
        if bn.value.len() != m {
            return Err(Error::ShapeMismatch {
                op: "affine bias",
                left: wn.shape.clone(),
                right: bn.shape.clone(),
            });
        }
        let rows = xn.rows();
        let (xv, wv, bv) = (&xn.value, &wn.value, &bn.value);
        let mut out = vec![0.0; rows * m];
        let mut support = Vec::with_capacity(n);
        for r in 0..rows {
            let xr = &xv[r * n..(r + 1) * n];
            let yr = &mut out[r * m..(r + 1) * m];
            if sparse_support(xr, &mut support) {
                for (i, y) in yr.iter_mut().enumerate() {
                    let wi = &wv[i * n..(i + 1) * n];
                    let mut s = 0.0;
                    for &j in &support {
                        s += wi[j] * xr[j];
                    }
                    *y = bv[i] + s;
                }
            } else {
                for (i, y) in yr.iter_mut().enumerate() {
                    *y = bv[i] + dot(&wv[i * n..(i + 1) * n], xr);
                }
            }
        }
        let shape = row_shape(&xn.shape, m);
        let needs = xn.needs_grad || wn.needs_grad || bn.needs_grad;
        Ok(self.push(shape, Cow::Owned(out), Op::Affine { x, w, b }, needs))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(x);
        let value: Vec<f64> = n.value.iter().map(|&v| f(v)).collect();
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push(shape, Cow::Owned(value), op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut sig = self.relu_signature;
        for &v in self.node(x).value.iter() {
            sig ^= (v > 0.0) as u64;
            sig = sig.wrapping_mul(0x0100_0000_01b3);
        }
        self.relu_signature = sig;
        // relu'(0) is taken to be 0, matching `v > 0.0` in the backward pass.
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let cols = n.cols();
        let mut out = n.value.to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push(shape, Cow::Owned(out), Op::Softmax(x), needs)
    }

    /// Row-wise log-softmax, `x - max - ln Σ exp(x - max)`.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let cols = n.cols();
        let mut out = n.value.to_vec();
        for row in out.chunks_mut(cols) {
            log_softmax_in_place(row);
        }
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push(shape, Cow::Owned(out), Op::LogSoftmax(x), needs)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (an, bn) = (self.node(a), self.node(b));
        if an.shape != bn.shape {
            return Err(Error::ShapeMismatch {
                op: name,
                left: an.shape.clone(),
                right: bn.shape.clone(),
            });
        }
        let value: Vec<f64> = an.value.iter().zip(bn.value.iter()).map(|(&x, &y)| f(x, y)).collect();
        let (shape, needs) = (an.shape.clone(), an.needs_grad || bn.needs_grad);
        Ok(self.push(shape, Cow::Owned(value), op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Concatenates along the last dimension; both inputs need the same rows.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.node(a), self.node(b));
        if an.shape.len() != bn.shape.len() || an.rows() != bn.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: an.shape.clone(),
                right: bn.shape.clone(),
            });
        }
        let (ca, cb) = (an.cols(), bn.cols());
        let mut out = Vec::with_capacity(an.value.len() + bn.value.len());
        for r in 0..an.rows() {
            out.extend_from_slice(&an.value[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bn.value[r * cb..(r + 1) * cb]);
        }
        let shape = row_shape(&an.shape, ca + cb);
        let needs = an.needs_grad || bn.needs_grad;
        Ok(self.push(shape, Cow::Owned(out), Op::ConcatCols(a, b), needs))
    }

    /// Sum of each row, shape `[rows, 1]` (or `[1]` for a vector).
    pub fn row_sum(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let cols = n.cols();
        let out: Vec<f64> = n.value.chunks(cols).map(|r| r.iter().sum()).collect();
        let (shape, needs) = (row_shape(&n.shape, 1), n.needs_grad);
        self.push(shape, Cow::Owned(out), Op::RowSum(x), needs)
    }

    /// Mean over every element, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let m = n.value.iter().sum::<f64>() / n.value.len() as f64;
        let needs = n.needs_grad;
        self.push(vec![1], Cow::Owned(vec![m]), Op::Mean(x), needs)
    }

    /// Selects column `indices[r]` from each row `r`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.node(x);
        let cols = n.cols();
        if indices.len() != n.rows() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                left: n.shape.clone(),
                right: vec![indices.len()],
            });
        }
        let mut out = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            if i >= cols {
                return Err(Error::IndexOutOfRange { index: i, len: cols });
            }
            out.push(n.value[r * cols + i]);
        }
        let (shape, needs) = (row_shape(&n.shape, 1), n.needs_grad);
        Ok(self.push(shape, Cow::Owned(out), Op::Pick(x, indices.to_vec()), needs))
    }

    /// `(1/n) Σ (aᵢ − bᵢ)²` over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::NotScalar(ln.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }

        let mut params = vec![None; self.store.len()];
        for (pid, v) in self.param_nodes.iter().enumerate() {
            if let Some(v) = v {
                params[pid] = grads[v.0].clone();
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn propagate(&self, node: &Node<'p>, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Affine { x, w, b } => {
                let (xn, wn) = (self.node(*x), self.node(*w));
                let n = xn.cols();
                let m = wn.shape[0];
                let rows = xn.rows();
                if needs(*b) {
                    let gb = slot(grads, *b, m);
                    for r in 0..rows {
                        axpy(1.0, &gy[r * m..(r + 1) * m], gb);
                    }
                }
                if needs(*w) {
                    let gw = slot(grads, *w, m * n);
                    let mut support = Vec::with_capacity(n);
                    for r in 0..rows {
                        let xr = &xn.value[r * n..(r + 1) * n];
                        let gr = &gy[r * m..(r + 1) * m];
                        let sparse = sparse_support(xr, &mut support);
                        for (i, &g) in gr.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i * n..(i + 1) * n];
                            if sparse {
                                for &j in &support {
                                    row[j] += g * xr[j];
                                }
                            } else {
                                axpy(g, xr, row);
                            }
                        }
                    }
                }
                if needs(*x) {
                    let gx = slot(grads, *x, rows * n);
                    for r in 0..rows {
                        let gr = &gy[r * m..(r + 1) * m];
                        let out = &mut gx[r * n..(r + 1) * n];
                        for (i, &g) in gr.iter().enumerate() {
                            if g != 0.0 {
                                axpy(g, &wn.value[i * n..(i + 1) * n], out);
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = &self.node(*x).value;
                let gx = slot(grads, *x, gy.len());
                for ((g, &d), &v) in gx.iter_mut().zip(gy).zip(xv.iter()) {
                    if v > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = slot(grads, *x, gy.len());
                for ((g, &d), &y) in gx.iter_mut().zip(gy).zip(node.value.iter()) {
                    *g += d * (1.0 - y * y);
                }
            }
            Op::Square(x) => {
                let xv = &self.node(*x).value;
                let gx = slot(grads, *x, gy.len());
                for ((g, &d), &v) in gx.iter_mut().zip(gy).zip(xv.iter()) {
                    *g += 2.0 * v * d;
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, gy.len());
                axpy(*c, gy, gx);
            }
            Op::Softmax(x) => {
                let cols = node.cols();
                let gx = slot(grads, *x, gy.len());
                for ((y, d), g) in node.value.chunks(cols).zip(gy.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let inner = dot(y, d);
                    for k in 0..cols {
                        g[k] += y[k] * (d[k] - inner);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let cols = node.cols();
                let gx = slot(grads, *x, gy.len());
                for ((y, d), g) in node.value.chunks(cols).zip(gy.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let total: f64 = d.iter().sum();
                    for k in 0..cols {
                        g[k] += d[k] - y[k].exp() * total;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        axpy(1.0, gy, slot(grads, v, gy.len()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    axpy(1.0, gy, slot(grads, *a, gy.len()));
                }
                if needs(*b) {
                    axpy(-1.0, gy, slot(grads, *b, gy.len()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = &self.node(*b).value;
                    let ga = slot(grads, *a, gy.len());
                    for ((g, &d), &o) in ga.iter_mut().zip(gy).zip(bv.iter()) {
                        *g += d * o;
                    }
                }
                if needs(*b) {
                    let av = &self.node(*a).value;
                    let gb = slot(grads, *b, gy.len());
                    for ((g, &d), &o) in gb.iter_mut().zip(gy).zip(av.iter()) {
                        *g += d * o;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.node(*a).cols(), self.node(*b).cols());
                let rows = gy.len() / (ca + cb);
                if needs(*a) {
                    let ga = slot(grads, *a, rows * ca);
                    for r in 0..rows {
                        axpy(1.0, &gy[r * (ca + cb)..r * (ca + cb) + ca], &mut ga[r * ca..(r + 1) * ca]);
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, rows * cb);
                    for r in 0..rows {
                        let start = r * (ca + cb) + ca;
                        axpy(1.0, &gy[start..start + cb], &mut gb[r * cb..(r + 1) * cb]);
                    }
                }
            }
            Op::RowSum(x) => {
                let xn = self.node(*x);
                let cols = xn.cols();
                let gx = slot(grads, *x, xn.value.len());
                for (row, &d) in gx.chunks_mut(cols).zip(gy) {
                    row.iter_mut().for_each(|g| *g += d);
                }
            }
            Op::Mean(x) => {
                let len = self.node(*x).value.len();
                let d = gy[0] / len as f64;
                slot(grads, *x, len).iter_mut().for_each(|g| *g += d);
            }
            Op::Pick(x, indices) => {
                let xn = self.node(*x);
                let cols = xn.cols();
                let gx = slot(grads, *x, xn.value.len());
                for (r, (&i, &d)) in indices.iter().zip(gy).enumerate() {
                    gx[r * cols + i] += d;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v = *v - max - lse);
}

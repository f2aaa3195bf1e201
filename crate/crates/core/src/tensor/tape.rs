//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as a node in creation order, which is
//! already a topological order, so the backward pass is a single reverse
//! sweep. Parameters of a [`ParamStore`] occupy the first nodes of the tape,
//! so `Var(i)` is the variable of parameter `i`.

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use crate::numerics::{digamma_unchecked, ln_gamma_unchecked, sigmoid, softplus, trigamma_unchecked};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Unary {
    Exp,
    Ln,
    Recip,
    Sqrt,
    Square,
    Abs,
    Softplus,
    Digamma,
    LnGamma,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

/// Gradients of a scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    n_params: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients in store order; parameters the output does not
    /// depend on get zero matrices.
    pub fn into_param_grads(mut self, store: &ParamStore) -> Vec<Matrix> {
        assert_eq!(store.len(), self.n_params);
        (0..self.n_params)
            .map(|i| {
                self.grads[i].take().unwrap_or_else(|| {
                    let (r, c) = store.value(ParamId(i)).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(m: &Matrix, i: usize, j: usize) -> usize {
    let r = if m.rows() == 1 { 0 } else { i };
    let c = if m.cols() == 1 { 0 } else { j };
    r * m.cols() + c
}

fn zip_broadcast(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Matrix::from_vec(a.rows(), a.cols(), data);
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape());
    let mut out = Matrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            out.set(i, j, f(a.data()[bidx(a, i, j)], b.data()[bidx(b, i, j)]));
        }
    }
    out
}

/// Sums `g` (full broadcast shape) down to the shape of `target`, weighting
/// each element by `w(i, j)`.
fn reduce_to(target: &Matrix, g: &Matrix, w: impl Fn(usize, usize) -> f64) -> Matrix {
    let mut out = Matrix::zeros(target.rows(), target.cols());
    if target.shape() == g.shape() {
        let c = g.cols();
        for (k, (o, gv)) in out.data_mut().iter_mut().zip(g.data()).enumerate() {
            *o = gv * w(k / c, k % c);
        }
        return out;
    }
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let k = bidx(target, i, j);
            out.data_mut()[k] += g.get(i, j) * w(i, j);
        }
    }
    out
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            n_params: 0,
        }
    }

    /// Tape whose first nodes are the trainable parameters of `store`.
    pub fn with_params(store: &ParamStore) -> Self {
        let mut tape = Self::new();
        for (_, value) in store.iter() {
            tape.push(value.clone(), Op::Leaf, true);
        }
        tape.n_params = store.len();
        tape
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(id.0 < self.n_params, "parameter {id:?} not bound to this tape");
        Var(id.0)
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives gradients but is not a store parameter.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNt(a, b), ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let f: fn(f64) -> f64 = match u {
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Recip => f64::recip,
            Unary::Sqrt => f64::sqrt,
            Unary::Square => |x| x * x,
            Unary::Abs => f64::abs,
            Unary::Softplus => softplus,
            Unary::Digamma => digamma_unchecked,
            Unary::LnGamma => ln_gamma_unchecked,
        };
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, Op::Unary(a, u), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    /// Elementwise ψ; inputs must be positive.
    pub fn digamma(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Digamma)
    }

    /// Elementwise ln Γ; inputs must be positive.
    pub fn ln_gamma(&mut self, a: Var) -> Var {
        self.unary(a, Unary::LnGamma)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut out = src.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Row sums as a column vector.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = (0..src.rows()).map(|i| src.row(i).iter().sum()).collect();
        let value = Matrix::from_vec(src.rows(), 1, data);
        let ng = self.ng(a);
        self.push(value, Op::SumRows(a), ng)
    }

    /// Column sums as a row vector.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut data = vec![0.0; src.cols()];
        for i in 0..src.rows() {
            for (d, v) in data.iter_mut().zip(src.row(i)) {
                *d += v;
            }
        }
        let value = Matrix::from_vec(1, src.cols(), data);
        let ng = self.ng(a);
        self.push(value, Op::SumCols(a), ng)
    }

    pub fn mean_cols(&mut self, a: Var) -> Var {
        let n = self.value(a).rows() as f64;
        let s = self.sum_cols(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).data().iter().sum());
        let ng = self.ng(a);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                off += m.cols();
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let src = self.value(a);
        assert!(start + width <= src.cols(), "slice out of range");
        let mut out = Matrix::zeros(src.rows(), width);
        for i in 0..src.rows() {
            out.row_mut(i).copy_from_slice(&src.row(i)[start..start + width]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Output row `k` is input row `idx[k]`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let value = self.value(a).select_rows(&idx);
        let ng = self.ng(a);
        self.push(value, Op::GatherRows(a, idx), ng)
    }

    /// Output row `idx[k]` accumulates input row `k`; `n_out` output rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Vec<usize>, n_out: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), idx.len());
        let mut out = Matrix::zeros(n_out, src.cols());
        for (k, &t) in idx.iter().enumerate() {
            for (o, v) in out.row_mut(t).iter_mut().zip(src.row(k)) {
                *o += v;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::ScatterAddRows(a, idx), ng)
    }

    /// Softmax of a column vector within groups sharing the same `segment` id.
    pub fn segment_softmax(&mut self, a: Var, segment: Vec<usize>, n_segments: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.cols(), 1);
        assert_eq!(src.rows(), segment.len());
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (k, &s) in segment.iter().enumerate() {
            max[s] = max[s].max(src.data()[k]);
        }
        let mut out: Vec<f64> = segment
            .iter()
            .enumerate()
            .map(|(k, &s)| (src.data()[k] - max[s]).exp())
            .collect();
        let mut sum = vec![0.0; n_segments];
        for (k, &s) in segment.iter().enumerate() {
            sum[s] += out[k];
        }
        for (k, &s) in segment.iter().enumerate() {
            out[k] /= sum[s];
        }
        let value = Matrix::from_vec(segment.len(), 1, out);
        let ng = self.ng(a);
        self.push(value, Op::SegmentSoftmax(a, segment), ng)
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            n_params: self.n_params,
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut send = |v: Var, contrib: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, g.matmul_nt(bv));
                }
                if self.ng(*b) {
                    send(*b, av.matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, g.matmul(bv));
                }
                if self.ng(*b) {
                    send(*b, g.matmul_tn(av));
                }
            }
            Op::Add(a, b) => {
                send(*a, reduce_to(self.value(*a), g, |_, _| 1.0));
                send(*b, reduce_to(self.value(*b), g, |_, _| 1.0));
            }
            Op::Sub(a, b) => {
                send(*a, reduce_to(self.value(*a), g, |_, _| 1.0));
                send(*b, reduce_to(self.value(*b), g, |_, _| -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, reduce_to(av, g, |i, j| bv.data()[bidx(bv, i, j)]));
                }
                if self.ng(*b) {
                    send(*b, reduce_to(bv, g, |i, j| av.data()[bidx(av, i, j)]));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, reduce_to(av, g, |i, j| 1.0 / bv.data()[bidx(bv, i, j)]));
                }
                if self.ng(*b) {
                    send(
                        *b,
                        reduce_to(bv, g, |i, j| {
                            let d = bv.data()[bidx(bv, i, j)];
                            -av.data()[bidx(av, i, j)] / (d * d)
                        }),
                    );
                }
            }
            Op::Scale(a, k) => send(*a, g.map(|x| x * k)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Unary(a, u) => {
                let x = self.value(*a);
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| {
                        gv * match u {
                            Unary::Exp => yv,
                            Unary::Ln => 1.0 / xv,
                            Unary::Recip => -yv * yv,
                            Unary::Sqrt => 0.5 / yv,
                            Unary::Square => 2.0 * xv,
                            Unary::Abs => {
                                if xv > 0.0 {
                                    1.0
                                } else if xv < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Softplus => sigmoid(xv),
                            Unary::Digamma => trigamma_unchecked(xv),
                            Unary::LnGamma => digamma_unchecked(xv),
                        }
                    })
                    .collect();
                send(*a, Matrix::from_vec(x.rows(), x.cols(), d));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let d = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv >= *lo && xv <= *hi { gv } else { 0.0 })
                    .collect();
                send(*a, Matrix::from_vec(x.rows(), x.cols(), d));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let d = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { slope * gv })
                    .collect();
                send(*a, Matrix::from_vec(x.rows(), x.cols(), d));
            }
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in d.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - inner);
                    }
                }
                send(*a, d);
            }
            Op::SumRows(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    d.row_mut(i).fill(g.data()[i]);
                }
                send(*a, d);
            }
            Op::SumCols(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    d.row_mut(i).copy_from_slice(g.data());
                }
                send(*a, d);
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                send(*a, Matrix::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.ng(*p) {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        send(*p, d);
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                send(*a, d);
            }
            Op::GatherRows(a, idx_list) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for (k, &src) in idx_list.iter().enumerate() {
                    for (o, v) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                send(*a, d);
            }
            Op::ScatterAddRows(a, idx_list) => {
                send(*a, g.select_rows(idx_list));
            }
            Op::SegmentSoftmax(a, segment) => {
                let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; n_seg];
                for (k, &s) in segment.iter().enumerate() {
                    inner[s] += y.data()[k] * g.data()[k];
                }
                let d = segment
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| y.data()[k] * (g.data()[k] - inner[s]))
                    .collect();
                send(*a, Matrix::from_vec(segment.len(), 1, d));
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

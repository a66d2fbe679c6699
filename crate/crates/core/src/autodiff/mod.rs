//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only tape built by one forward pass. Every
//! operation evaluates eagerly and records how to propagate gradients back to
//! its inputs; [`Graph::backward`] then walks the tape once in reverse.
//! Parameters enter the tape through [`Graph::param`], which remembers the
//! [`ParamId`] so gradients can be handed to an optimizer.
//!
//! Ops with a kink (`leaky_relu`, `relu`, `clamp`, `row_norm` at zero) record
//! how close any input came to the non-differentiable point; see
//! [`Graph::kink_margin`].

pub mod check;

pub use check::{check_gradients, ArrayCheck, GradCheckOptions, GradCheckReport};

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary<S> {
    Exp,
    Exp2,
    Ln,
    Tanh,
    Sigmoid,
    Gelu,
    Elu,
    Softplus,
    Square,
    Sqrt,
    Relu,
    LeakyRelu(S),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, Broadcast, usize, usize),
    Unary(Unary<S>, usize),
    Scale(usize, S),
    AddScalar(usize, S),
    Clamp(usize, S, S),
    Transpose(usize),
    SoftmaxRows(usize),
    LayerNormRows {
        x: usize,
        xhat: Matrix<S>,
        inv_std: Vec<S>,
    },
    SumAll(usize),
    MeanAll(usize),
    SumCols(usize),
    MeanRows(usize),
    RowNorm(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Rc<Vec<usize>>),
    IndexAddRows(usize, Rc<Vec<usize>>),
    SegmentSoftmax(usize, Rc<Vec<usize>>, usize),
    PairwiseDiff(usize),
    BlockMatMulT(usize, usize, usize),
    BlockMatMul(usize, usize, usize),
}

struct Node<S> {
    value: Matrix<S>,
    op: Op<S>,
    param: Option<ParamId>,
    /// Some parameter or variable leaf feeds this node.
    needs_grad: bool,
}

impl<S> Op<S> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Binary(_, _, a, b)
            | Op::BlockMatMulT(a, b, _)
            | Op::BlockMatMul(a, b, _) => vec![*a, *b],
            Op::Unary(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Clamp(a, _, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows { x: a, .. }
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SumCols(a)
            | Op::MeanRows(a)
            | Op::RowNorm(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::IndexAddRows(a, _)
            | Op::SegmentSoftmax(a, _, _)
            | Op::PairwiseDiff(a) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    param_vars: HashMap<ParamId, Var>,
    kink_margin: f64,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            kink_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance between any kinked op's input and its kink.
    ///
    /// Finite-difference checks are only meaningful when this exceeds the
    /// perturbation size by a comfortable factor.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>) -> Var {
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn note_kink(&mut self, distance: f64) {
        if distance < self.kink_margin {
            self.kink_margin = distance;
        }
    }

    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Differentiable leaf that is not backed by a parameter store.
    pub fn variable(&mut self, value: Matrix<S>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        v
    }

    pub fn constant_scalar(&mut self, value: S) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Leaf holding the current value of a parameter. Repeated calls for the
    /// same id return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        self.nodes[v.0].needs_grad = true;
        self.param_vars.insert(id, v);
        v
    }

    // ----------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    fn broadcast_kind(a: (usize, usize), b: (usize, usize)) -> Broadcast {
        if a == b {
            Broadcast::Same
        } else if b == (1, 1) {
            Broadcast::Scalar
        } else if b.0 == 1 && b.1 == a.1 {
            Broadcast::Row
        } else if b.1 == 1 && b.0 == a.0 {
            Broadcast::Col
        } else {
            panic!("cannot broadcast {b:?} into {a:?}")
        }
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let bc = Self::broadcast_kind(av.shape(), bv.shape());
        let (rows, cols) = av.shape();
        let f = |x: S, y: S| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (xs, ys) = (av.as_slice(), bv.as_slice());
        let mut out = Vec::with_capacity(rows * cols);
        match bc {
            Broadcast::Same => out.extend(xs.iter().zip(ys).map(|(&x, &y)| f(x, y))),
            Broadcast::Scalar => out.extend(xs.iter().map(|&x| f(x, ys[0]))),
            Broadcast::Row => {
                for row in xs.chunks(cols.max(1)) {
                    out.extend(row.iter().zip(ys).map(|(&x, &y)| f(x, y)));
                }
            }
            Broadcast::Col => {
                for (row, &y) in xs.chunks(cols.max(1)).zip(ys) {
                    out.extend(row.iter().map(|&x| f(x, y)));
                }
            }
        }
        let out = Matrix::from_vec(rows, cols, out);
        self.push(out, Op::Binary(kind, bc, a.0, b.0))
    }

    /// `a + b`, with `b` broadcast over rows, columns or as a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    /// `x * w + b` for a row-vector bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a.0, c))
    }

    fn unary(&mut self, kind: Unary<S>, a: Var) -> Var {
        let half = S::of(0.5);
        let value = {
            let x = self.value(a);
            match kind {
                Unary::Exp => x.map(S::exp),
                Unary::Exp2 => x.map(S::exp2),
                Unary::Ln => x.map(S::ln),
                Unary::Tanh => x.map(S::tanh),
                Unary::Sigmoid => x.map(sigmoid),
                Unary::Gelu => x.map(|v| half * v * (S::one() + gelu_inner(v).tanh())),
                Unary::Elu => x.map(|v| if v > S::zero() { v } else { v.exp_m1() }),
                Unary::Softplus => x.map(softplus),
                Unary::Square => x.map(|v| v * v),
                Unary::Sqrt => x.map(S::sqrt),
                Unary::Relu => x.map(|v| v.max(S::zero())),
                Unary::LeakyRelu(slope) => x.map(|v| if v > S::zero() { v } else { slope * v }),
            }
        };
        if matches!(kind, Unary::Relu | Unary::LeakyRelu(_)) {
            let m = self.value(a).as_slice().iter().fold(f64::INFINITY, |m, v| m.min(v.f64().abs()));
            self.note_kink(m);
        }
        self.push(value, Op::Unary(kind, a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    /// Elementwise `2^a`.
    pub fn exp2(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp2, a)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Unary::Ln, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(Unary::Gelu, a)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(Unary::Elu, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        let x = self.value(a);
        let margin = x.as_slice().iter().fold(f64::INFINITY, |m, &v| {
            m.min((v - lo).abs().f64()).min((v - hi).abs().f64())
        });
        let value = x.map(|v| v.max(lo).min(hi));
        self.note_kink(margin);
        self.push(value, Op::Clamp(a.0, lo, hi))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a.0))
    }

    /// Per-row standardisation (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: S) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let n = S::of_usize(cols);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv = S::one() / (var + eps).sqrt();
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = xhat.clone();
        self.push(value, Op::LayerNormRows { x: a.0, xhat, inv_std })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Matrix::scalar(x.sum() / S::of_usize(x.len().max(1)));
        self.push(value, Op::MeanAll(a.0))
    }

    /// Row sums: `n x d -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sums: Vec<S> = (0..x.rows()).map(|r| x.row(r).iter().copied().sum()).collect();
        let value = Matrix::column_vector(&sums);
        self.push(value, Op::SumCols(a.0))
    }

    /// Column means: `n x d -> 1 x d`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(1, cols);
        for r in 0..rows {
            for (o, &v) in out.row_mut(0).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = S::of_usize(rows.max(1));
        let value = out.map(|v| v / n);
        self.push(value, Op::MeanRows(a.0))
    }

    /// Euclidean norm of every row: `n x d -> n x 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let norms: Vec<S> = (0..x.rows())
            .map(|r| x.row(r).iter().map(|&v| v * v).sum::<S>().sqrt())
            .collect();
        let margin = norms.iter().fold(f64::INFINITY, |m, v| m.min(v.f64()));
        let value = Matrix::column_vector(&norms);
        self.note_kink(margin);
        self.push(value, Op::RowNorm(a.0))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a.0, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + x.cols()].copy_from_slice(x.row(r));
            }
            offset += x.cols();
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(x.as_slice());
            rows += x.rows();
        }
        let value = Matrix::from_vec(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    /// `out[e] = a[index[e]]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<Vec<usize>>) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(index.len(), x.cols());
        for (e, &i) in index.iter().enumerate() {
            out.row_mut(e).copy_from_slice(x.row(i));
        }
        self.push(out, Op::GatherRows(a.0, index))
    }

    /// Scatter-add: `out[index[e]] += a[e]`, with `n_out` output rows.
    pub fn index_add_rows(&mut self, a: Var, index: Rc<Vec<usize>>, n_out: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), index.len(), "index_add_rows length mismatch");
        let mut out = Matrix::zeros(n_out, x.cols());
        for (e, &i) in index.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(e)) {
                *o += v;
            }
        }
        self.push(out, Op::IndexAddRows(a.0, index))
    }

    /// Column-wise softmax over groups of rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, segments: Rc<Vec<usize>>, n_segments: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), segments.len(), "segment_softmax length mismatch");
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(rows, cols);
        let mut maxes = vec![S::neg_infinity(); n_segments];
        let mut sums = vec![S::zero(); n_segments];
        for c in 0..cols {
            maxes.iter_mut().for_each(|m| *m = S::neg_infinity());
            sums.iter_mut().for_each(|s| *s = S::zero());
            for r in 0..rows {
                let s = segments[r];
                maxes[s] = maxes[s].max(x[(r, c)]);
            }
            for r in 0..rows {
                let s = segments[r];
                let e = (x[(r, c)] - maxes[s]).exp();
                out[(r, c)] = e;
                sums[s] += e;
            }
            for r in 0..rows {
                out[(r, c)] /= sums[segments[r]];
            }
        }
        self.push(out, Op::SegmentSoftmax(a.0, segments, n_segments))
    }

    /// `n x 1 -> n x n` with `out[i][j] = a[j] - a[i]`.
    pub fn pairwise_diff(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols(), 1, "pairwise_diff expects a column vector");
        let n = x.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = x[(j, 0)] - x[(i, 0)];
            }
        }
        self.push(out, Op::PairwiseDiff(a.0))
    }

    /// Block-diagonal `A Bᵀ`: both inputs are stacks of `block`-row blocks;
    /// output block `k` is `A_k B_kᵀ` (`block x block`).
    pub fn block_matmul_t(&mut self, a: Var, b: Var, block: usize) -> Var {
        let value = block_mm_t(self.value(a), self.value(b), block);
        self.push(value, Op::BlockMatMulT(a.0, b.0, block))
    }

    /// Block-diagonal product: `a` stacks `block x block` blocks, `b` stacks
    /// `block x d` blocks; output block `k` is `A_k B_k`.
    pub fn block_matmul(&mut self, a: Var, b: Var, block: usize) -> Var {
        let value = block_mm(self.value(a), self.value(b), block);
        self.push(value, Op::BlockMatMul(a.0, b.0, block))
    }

    // ------------------------------------------------------------ backward

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Backward<S> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(S::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Backward {
            grads,
            params: self.param_vars.iter().map(|(&id, &v)| (id, v)).collect(),
        }
    }

    fn propagate(&self, node: &Node<S>, g: &Matrix<S>, grads: &mut [Option<Matrix<S>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let need = |i: usize| self.nodes[i].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(*a) {
                    accumulate(grads, *a, g.matmul_t(val(*b)));
                }
                if need(*b) {
                    accumulate(grads, *b, val(*a).t_matmul(g));
                }
            }
            Op::Binary(kind, bc, a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (rows, cols) = av.shape();
                if need(*a) {
                    let ga = match kind {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.clone(),
                        Binary::Mul | Binary::Div => {
                            let mut ga = Vec::with_capacity(rows * cols);
                            let ys = bv.as_slice();
                            for (i, &gi) in g.as_slice().iter().enumerate() {
                                let y = match bc {
                                    Broadcast::Same => ys[i],
                                    Broadcast::Row => ys[i % cols],
                                    Broadcast::Col => ys[i / cols],
                                    Broadcast::Scalar => ys[0],
                                };
                                ga.push(if matches!(kind, Binary::Mul) { gi * y } else { gi / y });
                            }
                            Matrix::from_vec(rows, cols, ga)
                        }
                    };
                    accumulate(grads, *a, ga);
                }
                if need(*b) {
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    let (xs, ys) = (av.as_slice(), bv.as_slice());
                    let out = gb.as_mut_slice();
                    for (i, &gi) in g.as_slice().iter().enumerate() {
                        let bi = match bc {
                            Broadcast::Same => i,
                            Broadcast::Row => i % cols,
                            Broadcast::Col => i / cols,
                            Broadcast::Scalar => 0,
                        };
                        out[bi] += match kind {
                            Binary::Add => gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * xs[i],
                            Binary::Div => -gi * xs[i] / (ys[bi] * ys[bi]),
                        };
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = &node.value;
                let half = S::of(0.5);
                let mut ga = g.clone();
                for ((gi, &xi), &yi) in ga.as_mut_slice().iter_mut().zip(x.as_slice()).zip(y.as_slice()) {
                    let d = match kind {
                        Unary::Exp => yi,
                        Unary::Exp2 => yi * S::of(std::f64::consts::LN_2),
                        Unary::Ln => S::one() / xi,
                        Unary::Tanh => S::one() - yi * yi,
                        Unary::Sigmoid => yi * (S::one() - yi),
                        Unary::Gelu => {
                            let t = gelu_inner(xi).tanh();
                            let k = S::of(GELU_K);
                            let dinner = k * (S::one() + S::of(3.0 * GELU_C) * xi * xi);
                            half * (S::one() + t) + half * xi * (S::one() - t * t) * dinner
                        }
                        Unary::Elu => {
                            if xi > S::zero() {
                                S::one()
                            } else {
                                xi.exp()
                            }
                        }
                        Unary::Softplus => sigmoid(xi),
                        Unary::Square => S::of(2.0) * xi,
                        Unary::Sqrt => {
                            if yi > S::zero() {
                                half / yi
                            } else {
                                S::zero()
                            }
                        }
                        Unary::Relu => {
                            if xi > S::zero() {
                                S::one()
                            } else {
                                S::zero()
                            }
                        }
                        Unary::LeakyRelu(slope) => {
                            if xi > S::zero() {
                                S::one()
                            } else {
                                *slope
                            }
                        }
                    };
                    *gi *= d;
                }
                accumulate(grads, *a, ga);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
            Op::AddScalar(a, _) => accumulate(grads, *a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                let ga = g.zip_map(x, |gi, xi| if xi > *lo && xi < *hi { gi } else { S::zero() });
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: S = y.row(r).iter().zip(g.row(r)).map(|(&yi, &gi)| yi * gi).sum();
                    for c in 0..y.cols() {
                        ga[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNormRows { x, xhat, inv_std } => {
                let (rows, cols) = xhat.shape();
                let n = S::of_usize(cols);
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gs: S = g.row(r).iter().copied().sum();
                    let gx: S = g.row(r).iter().zip(xhat.row(r)).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        ga[(r, c)] = inv_std[r] / n * (n * g[(r, c)] - gs - xhat[(r, c)] * gx);
                    }
                }
                accumulate(grads, *x, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::MeanAll(a) => {
                let (r, c) = val(*a).shape();
                let n = S::of_usize((r * c).max(1));
                accumulate(grads, *a, Matrix::filled(r, c, g.item() / n));
            }
            Op::SumCols(a) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r).iter_mut().for_each(|v| *v = g[(r, 0)]);
                }
                accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (rows, cols) = val(*a).shape();
                let n = S::of_usize(rows.max(1));
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        ga[(r, c)] = g[(0, c)] / n;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::RowNorm(a) => {
                let x = val(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = node.value[(r, 0)];
                    if norm > S::zero() {
                        let k = g[(r, 0)] / norm;
                        for (o, &v) in ga.row_mut(r).iter_mut().zip(x.row(r)) {
                            *o = k * v;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    if !need(p) {
                        offset += cols;
                        continue;
                    }
                    let mut gp = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    let start = offset * cols;
                    let gp = Matrix::from_vec(rows, cols, g.as_slice()[start..start + rows * cols].to_vec());
                    offset += rows;
                    accumulate(grads, p, gp);
                }
            }
            Op::GatherRows(a, index) => {
                let x = val(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (e, &i) in index.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(e)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::IndexAddRows(a, index) => {
                let x = val(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (e, &i) in index.iter().enumerate() {
                    ga.row_mut(e).copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, segments, n_segments) => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut ga = Matrix::zeros(rows, cols);
                let mut dots = vec![S::zero(); *n_segments];
                for c in 0..cols {
                    dots.iter_mut().for_each(|d| *d = S::zero());
                    for r in 0..rows {
                        dots[segments[r]] += y[(r, c)] * g[(r, c)];
                    }
                    for r in 0..rows {
                        ga[(r, c)] = y[(r, c)] * (g[(r, c)] - dots[segments[r]]);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::BlockMatMulT(a, b, block) => {
                // out_k = A_k B_k^T
                if need(*a) {
                    accumulate(grads, *a, block_mm(g, val(*b), *block));
                }
                if need(*b) {
                    accumulate(grads, *b, block_tmm(g, val(*a), *block));
                }
            }
            Op::BlockMatMul(a, b, block) => {
                // out_k = A_k B_k
                if need(*a) {
                    accumulate(grads, *a, block_mm_t(g, val(*b), *block));
                }
                if need(*b) {
                    accumulate(grads, *b, block_tmm(val(*a), g, *block));
                }
            }
            Op::PairwiseDiff(a) => {
                let n = g.rows();
                let mut ga = Matrix::zeros(n, 1);
                for i in 0..n {
                    for j in 0..n {
                        let gij = g[(i, j)];
                        ga[(j, 0)] += gij;
                        ga[(i, 0)] -= gij;
                    }
                }
                accumulate(grads, *a, ga);
            }
        }
    }
}

/// Per block `k`: `A_k B_kᵀ` with `A_k`, `B_k` of `block` rows.
fn block_mm_t<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, block: usize) -> Matrix<S> {
    assert!(block > 0 && a.rows() % block == 0, "block size mismatch");
    assert_eq!(a.shape(), b.shape(), "block_matmul_t shape mismatch");
    let mut out = Matrix::zeros(a.rows(), block);
    for base in (0..a.rows()).step_by(block) {
        for i in 0..block {
            let ar = a.row(base + i);
            for j in 0..block {
                let br = b.row(base + j);
                out[(base + i, j)] = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
            }
        }
    }
    out
}

/// Per block `k`: `A_k B_k` with `A_k` of shape `block x block`.
fn block_mm<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, block: usize) -> Matrix<S> {
    assert!(block > 0 && a.cols() == block && a.rows() == b.rows() && a.rows() % block == 0, "block size mismatch");
    let d = b.cols();
    let mut out = Matrix::zeros(a.rows(), d);
    for base in (0..a.rows()).step_by(block) {
        for i in 0..block {
            for k in 0..block {
                let p = a[(base + i, k)];
                if p == S::zero() {
                    continue;
                }
                let (src, dst) = (base + k, base + i);
                for c in 0..d {
                    let v = b[(src, c)];
                    out[(dst, c)] += p * v;
                }
            }
        }
    }
    out
}

/// Per block `k`: `A_kᵀ B_k` with `A_k` of shape `block x block`.
fn block_tmm<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, block: usize) -> Matrix<S> {
    assert!(block > 0 && a.cols() == block && a.rows() == b.rows() && a.rows() % block == 0, "block size mismatch");
    let d = b.cols();
    let mut out = Matrix::zeros(a.rows(), d);
    for base in (0..a.rows()).step_by(block) {
        for i in 0..block {
            for k in 0..block {
                let p = a[(base + k, i)];
                for c in 0..d {
                    let v = b[(base + k, c)];
                    out[(base + i, c)] += p * v;
                }
            }
        }
    }
    out
}

fn accumulate<S: Scalar>(grads: &mut [Option<Matrix<S>>], idx: usize, g: Matrix<S>) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu_inner<S: Scalar>(x: S) -> S {
    S::of(GELU_K) * (x + S::of(GELU_C) * x * x * x)
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Result of [`Graph::backward`].
pub struct Backward<S> {
    grads: Vec<Option<Matrix<S>>>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Backward<S> {
    /// Gradient with respect to any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter that entered the tape.
    pub fn param_grads(&self) -> Gradients<S> {
        let mut out = BTreeMap::new();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out.insert(id, g.clone());
            }
        }
        Gradients { grads: out }
    }
}

/// Parameter gradients keyed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<S> {
    grads: BTreeMap<ParamId, Matrix<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> Option<&Matrix<S>> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix<S>)> {
        self.grads.iter().map(|(&id, g)| (id, g))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Matrix::all_finite)
    }

    pub fn accumulate(&mut self, other: &Gradients<S>) {
        for (id, g) in other.iter() {
            match self.grads.get_mut(&id) {
                Some(existing) => existing.add_assign(g),
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in self.grads.values_mut() {
            *g = g.scale(c);
        }
    }

    /// Global L2 norm over all gradients.
    pub fn norm(&self) -> S {
        self.grads
            .values()
            .map(|g| g.as_slice().iter().map(|&v| v * v).sum::<S>())
            .sum::<S>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_add_reduces_bias_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Matrix::from_f64(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.variable(Matrix::from_f64(1, 2, &[10.0, 20.0]));
        let y = g.add(x, b);
        assert_eq!(g.value(y).as_slice(), &[11.0, 22.0, 13.0, 24.0]);
        let s = g.sum(y);
        let back = g.backward(s);
        assert_eq!(back.wrt(b).unwrap().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn segment_softmax_normalises_each_group() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Matrix::from_f64(4, 1, &[0.3, -1.0, 2.0, 0.5]));
        let y = g.segment_softmax(x, Rc::new(vec![0, 1, 0, 1]), 2);
        let v = g.value(y);
        assert!((v[(0, 0)] + v[(2, 0)] - 1.0).abs() < 1e-12);
        assert!((v[(1, 0)] + v[(3, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_records_kink_margin() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Matrix::from_f64(1, 3, &[0.5, -0.02, 3.0]));
        let _ = g.relu(x);
        assert!((g.kink_margin() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn pairwise_diff_layout() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Matrix::from_f64(3, 1, &[1.0, 4.0, 9.0]));
        let d = g.pairwise_diff(x);
        assert_eq!(g.value(d)[(0, 2)], 8.0);
        assert_eq!(g.value(d)[(2, 0)], -8.0);
    }
}

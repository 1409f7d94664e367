//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is an append-only arena of nodes. Each node owns its value, the
//! operation that produced it, and the ids of its parents; ids are created in
//! topological order, so the backward sweep is a single reverse walk. After
//! [`Tape::backward`] runs from a scalar root, every reachable node holds the
//! exact partial derivative of the root with respect to its value.
//!
//! Design notes:
//! - Nodes created from trainable leaves are flagged `requires_grad`; the flag
//!   propagates to consumers, and the backward sweep skips constant subgraphs.
//! - Every node value is scanned for non-finite entries on creation (can be
//!   disabled with [`Tape::set_finite_checks`]); training uses this as its NaN
//!   trip wire.
//! - Spatial gradients of network outputs are produced by propagating input
//!   Jacobians through these same primitives during the forward pass, so one
//!   first-order reverse sweep also differentiates losses built on those
//!   gradients. No second-order engine exists or is needed.

use crate::mat::Mat;
use crate::scalar::{real, Real};
use std::sync::Arc;
use thiserror::Error;

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: invalid shape {shape:?}: {why}")]
    BadShape {
        op: &'static str,
        shape: (usize, usize),
        why: String,
    },
    #[error("non-finite value produced at node {node} by {op}")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward root must be 1x1, got {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("{op}: scalar argument must be positive, got {value}")]
    NonPositiveScalar { op: &'static str, value: f64 },
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    AddRowVec(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Scale(NodeId, T),
    AddConst(NodeId, T),
    Relu(NodeId),
    Softplus(NodeId, T),
    Sigmoid(NodeId, T),
    Exp(NodeId),
    Ln(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Abs(NodeId),
    // Parent id kept for graph uniformity; the derivative is zero so the
    // backward sweep never reads it.
    Sign(#[allow(dead_code)] NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    ClampMin(NodeId, T),
    ClampMax(NodeId, T),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    RowSum(NodeId),
    RowMax(NodeId),
    ScaleRows(NodeId, NodeId),
    MulScalar(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    GatherRows(NodeId, Arc<Vec<usize>>),
    Reshape(NodeId),
    ExclCumsumRows(NodeId),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation graph with reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Mat<T>>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: true,
        }
    }

    /// Enables or disables the per-node finite scan.
    pub fn set_finite_checks(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward root with respect to this node, if the
    /// node was reachable.
    pub fn grad(&self, id: NodeId) -> Option<&Mat<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(
        &mut self,
        value: Mat<T>,
        op: Op<T>,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<NodeId, TapeError> {
        if self.check_finite && !value.all_finite() {
            return Err(TapeError::NonFinite {
                node: self.nodes.len(),
                op: name,
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(usize, usize), TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TapeError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(sa)
    }

    // ── leaves ──

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Mat<T>) -> Result<NodeId, TapeError> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Trainable leaf; [`Tape::grad`] is defined for it after backward.
    pub fn var(&mut self, value: Mat<T>) -> Result<NodeId, TapeError> {
        self.push(value, Op::Leaf, true, "var")
    }

    pub fn constant_scalar(&mut self, v: T) -> Result<NodeId, TapeError> {
        self.constant(Mat::scalar(v))
    }

    // ── binary ops ──

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("add", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), self.rg(a) || self.rg(b), "add")
    }

    /// `a + b` where `b` is a `[1 x n]` row broadcast over the rows of `a`.
    pub fn add_row_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(TapeError::ShapeMismatch {
                op: "add_row_vec",
                lhs: sa,
                rhs: sb,
            });
        }
        let bm = self.value(b).clone();
        let mut v = self.value(a).clone();
        for i in 0..sa.0 {
            let row = v.row_mut(i);
            for (x, y) in row.iter_mut().zip(bm.as_slice()) {
                *x += *y;
            }
        }
        self.push(v, Op::AddRowVec(a, b), self.rg(a) || self.rg(b), "add_row_vec")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("sub", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), self.rg(a) || self.rg(b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("mul", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), self.rg(a) || self.rg(b), "mul")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), self.rg(a) || self.rg(b), "matmul")
    }

    /// Rows of `a` scaled by the per-row factors in the `[m x 1]` node `s`.
    pub fn scale_rows(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, TapeError> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if ss != (sa.0, 1) {
            return Err(TapeError::ShapeMismatch {
                op: "scale_rows",
                lhs: sa,
                rhs: ss,
            });
        }
        let sm = self.value(s).clone();
        let mut v = self.value(a).clone();
        for i in 0..sa.0 {
            let f = sm.at(i, 0);
            for x in v.row_mut(i) {
                *x = *x * f;
            }
        }
        self.push(v, Op::ScaleRows(a, s), self.rg(a) || self.rg(s), "scale_rows")
    }

    /// Whole matrix scaled by a `[1 x 1]` node.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, TapeError> {
        let ss = self.shape(s);
        if ss != (1, 1) {
            return Err(TapeError::BadShape {
                op: "mul_scalar",
                shape: ss,
                why: "scale factor must be 1x1".into(),
            });
        }
        let f = self.value(s).item();
        let v = self.value(a).map(|x| x * f);
        self.push(v, Op::MulScalar(a, s), self.rg(a) || self.rg(s), "mul_scalar")
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(TapeError::ShapeMismatch {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let (am, bm) = (self.value(a), self.value(b));
        let mut v = Mat::zeros(sa.0, sa.1 + sb.1);
        for i in 0..sa.0 {
            let row = v.row_mut(i);
            row[..sa.1].copy_from_slice(am.row(i));
            row[sa.1..].copy_from_slice(bm.row(i));
        }
        self.push(v, Op::ConcatCols(a, b), self.rg(a) || self.rg(b), "concat_cols")
    }

    // ── unary ops with a constant attribute ──

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), self.rg(a), "scale")
    }

    pub fn add_const(&mut self, a: NodeId, c: T) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a, c), self.rg(a), "add_const")
    }

    /// Division by a strictly positive scalar constant.
    pub fn div_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId, TapeError> {
        if !(c > T::zero()) {
            return Err(TapeError::NonPositiveScalar {
                op: "div_scalar",
                value: c.to_f64_lossy(),
            });
        }
        self.scale(a, T::one() / c)
    }

    pub fn clamp_min(&mut self, a: NodeId, c: T) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.max(c));
        self.push(v, Op::ClampMin(a, c), self.rg(a), "clamp_min")
    }

    pub fn clamp_max(&mut self, a: NodeId, c: T) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.min(c));
        self.push(v, Op::ClampMax(a, c), self.rg(a), "clamp_max")
    }

    /// Softplus with sharpness `s`: `ln(1 + exp(s*x)) / s`, evaluated stably.
    pub fn softplus(&mut self, a: NodeId, s: T) -> Result<NodeId, TapeError> {
        if !(s > T::zero()) {
            return Err(TapeError::NonPositiveScalar {
                op: "softplus",
                value: s.to_f64_lossy(),
            });
        }
        let v = self.value(a).map(|x| softplus_stable(x, s));
        self.push(v, Op::Softplus(a, s), self.rg(a), "softplus")
    }

    /// Logistic sigmoid of `s*x`.
    pub fn sigmoid(&mut self, a: NodeId, s: T) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| sigmoid_stable(x, s));
        self.push(v, Op::Sigmoid(a, s), self.rg(a), "sigmoid")
    }

    // ── elementwise unary ops ──

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a), self.rg(a), "relu")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a), self.rg(a), "exp")
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Ln(a), self.rg(a), "ln")
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.sin());
        self.push(v, Op::Sin(a), self.rg(a), "sin")
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.cos());
        self.push(v, Op::Cos(a), self.rg(a), "cos")
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), self.rg(a), "abs")
    }

    /// Sign in {-1, 0, +1}; derivative is zero almost everywhere and treated
    /// as zero.
    pub fn sign(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let z = T::zero();
        let o = T::one();
        let v = self.value(a).map(|x| if x > z { o } else if x < z { -o } else { z });
        self.push(v, Op::Sign(a), self.rg(a), "sign")
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| x.sqrt());
        self.push(v, Op::Sqrt(a), self.rg(a), "sqrt")
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.value(a).map(|x| T::one() / x);
        self.push(v, Op::Recip(a), self.rg(a), "recip")
    }

    // ── reductions and structure ──

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let am = self.value(a);
        let (m, n) = am.shape();
        let mut v = Mat::zeros(m, n);
        for i in 0..m {
            let row = am.row(i);
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let out = v.row_mut(i);
            let mut denom = T::zero();
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - mx).exp();
                denom += *o;
            }
            for o in out.iter_mut() {
                *o = *o / denom;
            }
        }
        self.push(v, Op::SoftmaxRows(a), self.rg(a), "softmax_rows")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let s = self.value(a).as_slice().iter().cloned().sum();
        self.push(Mat::scalar(s), Op::SumAll(a), self.rg(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let am = self.value(a);
        if am.is_empty() {
            return Err(TapeError::BadShape {
                op: "mean_all",
                shape: am.shape(),
                why: "mean of an empty matrix".into(),
            });
        }
        let s: T = am.as_slice().iter().cloned().sum();
        let v = s / real::<T>(am.len() as f64);
        self.push(Mat::scalar(v), Op::MeanAll(a), self.rg(a), "mean_all")
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let am = self.value(a);
        let m = am.rows();
        let v = Mat::from_fn(m, 1, |i, _| am.row(i).iter().cloned().sum());
        self.push(v, Op::RowSum(a), self.rg(a), "row_sum")
    }

    /// Per-row maximum; gradient flows to the first maximal entry of each row.
    pub fn row_max(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let am = self.value(a);
        if am.cols() == 0 {
            return Err(TapeError::BadShape {
                op: "row_max",
                shape: am.shape(),
                why: "max over zero columns".into(),
            });
        }
        let m = am.rows();
        let v = Mat::from_fn(m, 1, |i, _| {
            am.row(i).iter().cloned().fold(T::neg_infinity(), T::max)
        });
        self.push(v, Op::RowMax(a), self.rg(a), "row_max")
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        let sa = self.shape(a);
        if start + len > sa.1 {
            return Err(TapeError::BadShape {
                op: "slice_cols",
                shape: sa,
                why: format!("column range {start}..{} out of bounds", start + len),
            });
        }
        let am = self.value(a);
        let v = Mat::from_fn(sa.0, len, |i, j| am.at(i, start + j));
        self.push(v, Op::SliceCols(a, start, len), self.rg(a), "slice_cols")
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        let sa = self.shape(a);
        if start + len > sa.0 {
            return Err(TapeError::BadShape {
                op: "slice_rows",
                shape: sa,
                why: format!("row range {start}..{} out of bounds", start + len),
            });
        }
        let am = self.value(a);
        let mut v = Mat::zeros(len, sa.1);
        for i in 0..len {
            v.row_mut(i).copy_from_slice(am.row(start + i));
        }
        self.push(v, Op::SliceRows(a, start, len), self.rg(a), "slice_rows")
    }

    /// Rows of `a` gathered by index; duplicate indices are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId, TapeError> {
        let sa = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= sa.0) {
            return Err(TapeError::BadShape {
                op: "gather_rows",
                shape: sa,
                why: format!("row index {bad} out of bounds"),
            });
        }
        let am = self.value(a);
        let mut v = Mat::zeros(idx.len(), sa.1);
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(am.row(i));
        }
        self.push(v, Op::GatherRows(a, Arc::new(idx)), self.rg(a), "gather_rows")
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, TapeError> {
        let sa = self.shape(a);
        if rows * cols != sa.0 * sa.1 {
            return Err(TapeError::BadShape {
                op: "reshape",
                shape: sa,
                why: format!("cannot reshape to {rows}x{cols}"),
            });
        }
        let v = self.value(a).reshaped(rows, cols);
        self.push(v, Op::Reshape(a), self.rg(a), "reshape")
    }

    /// `y[i][j] = sum of x[i][l] for l < j` (zero in the first column).
    pub fn exclusive_cumsum_rows(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let am = self.value(a);
        let (m, n) = am.shape();
        let mut v = Mat::zeros(m, n);
        for i in 0..m {
            let src = am.row(i);
            let dst = v.row_mut(i);
            let mut acc = T::zero();
            for j in 0..n {
                dst[j] = acc;
                acc += src[j];
            }
        }
        self.push(v, Op::ExclCumsumRows(a), self.rg(a), "exclusive_cumsum_rows")
    }

    // ── composites ──

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.scale(a, -T::one())
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let n = self.neg(a)?;
        self.add_const(n, T::one())
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.mul(a, a)
    }

    /// Per-row Euclidean norm, `[m x n] -> [m x 1]`.
    pub fn row_l2_norm(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let sq = self.square(a)?;
        let s = self.row_sum(sq)?;
        self.sqrt(s)
    }

    /// Per-row L1 norm, `[m x n] -> [m x 1]`.
    pub fn row_l1_norm(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let ab = self.abs(a)?;
        self.row_sum(ab)
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId, TapeError> {
        let m = self.clamp_min(a, lo)?;
        self.clamp_max(m, hi)
    }

    // ── backward ──

    /// Reverse sweep from a scalar root. Gradients of earlier sweeps are
    /// discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TapeError> {
        let rs = self.shape(root);
        if rs != (1, 1) {
            return Err(TapeError::NonScalarRoot { shape: rs });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(Mat::scalar(T::one()));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].clone() else {
                continue;
            };
            self.backprop_node(id, &g);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, delta: Mat<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&mut self, id: usize, g: &Mat<T>) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(a, g.clone());
                self.accum(b, g.clone());
            }
            Op::AddRowVec(a, b) => {
                self.accum(a, g.clone());
                let (m, n) = g.shape();
                let mut db = Mat::zeros(1, n);
                for i in 0..m {
                    let row = g.row(i);
                    let acc = db.row_mut(0);
                    for j in 0..n {
                        acc[j] += row[j];
                    }
                }
                self.accum(b, db);
            }
            Op::Sub(a, b) => {
                self.accum(a, g.clone());
                self.accum(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    let d = zip(g, self.value(b), |x, y| x * y);
                    self.accum(a, d);
                }
                if self.rg(b) {
                    let d = zip(g, self.value(a), |x, y| x * y);
                    self.accum(b, d);
                }
            }
            Op::MatMul(a, b) => {
                if self.rg(a) {
                    let d = g.matmul_nt(self.value(b));
                    self.accum(a, d);
                }
                if self.rg(b) {
                    let d = self.value(a).matmul_tn(g);
                    self.accum(b, d);
                }
            }
            Op::Scale(a, c) => self.accum(a, g.map(|x| x * c)),
            Op::AddConst(a, _) => self.accum(a, g.clone()),
            Op::Relu(a) => {
                let d = zip(g, self.value(a), |x, v| if v > T::zero() { x } else { T::zero() });
                self.accum(a, d);
            }
            Op::Softplus(a, s) => {
                let d = zip(g, self.value(a), |x, v| x * sigmoid_stable(v, s));
                self.accum(a, d);
            }
            Op::Sigmoid(a, s) => {
                let d = zip(g, self.nodes[id].value_ref(), |x, y| x * s * y * (T::one() - y));
                self.accum(a, d);
            }
            Op::Exp(a) => {
                let d = zip(g, self.nodes[id].value_ref(), |x, y| x * y);
                self.accum(a, d);
            }
            Op::Ln(a) => {
                let d = zip(g, self.value(a), |x, v| x / v);
                self.accum(a, d);
            }
            Op::Sin(a) => {
                let d = zip(g, self.value(a), |x, v| x * v.cos());
                self.accum(a, d);
            }
            Op::Cos(a) => {
                let d = zip(g, self.value(a), |x, v| -x * v.sin());
                self.accum(a, d);
            }
            Op::Abs(a) => {
                let z = T::zero();
                let d = zip(g, self.value(a), |x, v| {
                    if v > z {
                        x
                    } else if v < z {
                        -x
                    } else {
                        z
                    }
                });
                self.accum(a, d);
            }
            Op::Sign(_) => {}
            Op::Sqrt(a) => {
                let half = real::<T>(0.5);
                let d = zip(g, self.nodes[id].value_ref(), |x, y| x * half / y);
                self.accum(a, d);
            }
            Op::Recip(a) => {
                let d = zip(g, self.nodes[id].value_ref(), |x, y| -x * y * y);
                self.accum(a, d);
            }
            Op::ClampMin(a, c) => {
                let d = zip(g, self.value(a), |x, v| if v >= c { x } else { T::zero() });
                self.accum(a, d);
            }
            Op::ClampMax(a, c) => {
                let d = zip(g, self.value(a), |x, v| if v <= c { x } else { T::zero() });
                self.accum(a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = self.nodes[id].value_ref();
                let (m, n) = y.shape();
                let mut d = Mat::zeros(m, n);
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: T = yr.iter().zip(gr).map(|(&u, &v)| u * v).sum();
                    let dr = d.row_mut(i);
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(a, d);
            }
            Op::SumAll(a) => {
                let (m, n) = self.shape(a);
                self.accum(a, Mat::filled(m, n, g.item()));
            }
            Op::MeanAll(a) => {
                let (m, n) = self.shape(a);
                let v = g.item() / real::<T>((m * n) as f64);
                self.accum(a, Mat::filled(m, n, v));
            }
            Op::RowSum(a) => {
                let (m, n) = self.shape(a);
                let mut d = Mat::zeros(m, n);
                for i in 0..m {
                    let v = g.at(i, 0);
                    for x in d.row_mut(i) {
                        *x = v;
                    }
                }
                self.accum(a, d);
            }
            Op::RowMax(a) => {
                let av = self.value(a).clone();
                let (m, n) = av.shape();
                let mut d = Mat::zeros(m, n);
                for i in 0..m {
                    let row = av.row(i);
                    let mut best = 0;
                    for j in 1..n {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    *d.at_mut(i, best) = g.at(i, 0);
                }
                self.accum(a, d);
            }
            Op::ScaleRows(a, s) => {
                if self.rg(a) {
                    let sv = self.value(s);
                    let (m, n) = g.shape();
                    let mut d = Mat::zeros(m, n);
                    for i in 0..m {
                        let f = sv.at(i, 0);
                        let gr = g.row(i);
                        let dr = d.row_mut(i);
                        for j in 0..n {
                            dr[j] = gr[j] * f;
                        }
                    }
                    self.accum(a, d);
                }
                if self.rg(s) {
                    let av = self.value(a);
                    let m = g.rows();
                    let d = Mat::from_fn(m, 1, |i, _| {
                        g.row(i).iter().zip(av.row(i)).map(|(&x, &y)| x * y).sum()
                    });
                    self.accum(s, d);
                }
            }
            Op::MulScalar(a, s) => {
                if self.rg(a) {
                    let f = self.value(s).item();
                    self.accum(a, g.map(|x| x * f));
                }
                if self.rg(s) {
                    let av = self.value(a);
                    let dot: T = g
                        .as_slice()
                        .iter()
                        .zip(av.as_slice())
                        .map(|(&x, &y)| x * y)
                        .sum();
                    self.accum(s, Mat::scalar(dot));
                }
            }
            Op::ConcatCols(a, b) => {
                let na = self.shape(a).1;
                let (m, n) = g.shape();
                if self.rg(a) {
                    let d = Mat::from_fn(m, na, |i, j| g.at(i, j));
                    self.accum(a, d);
                }
                if self.rg(b) {
                    let d = Mat::from_fn(m, n - na, |i, j| g.at(i, na + j));
                    self.accum(b, d);
                }
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = self.shape(a);
                let mut d = Mat::zeros(m, n);
                for i in 0..m {
                    let dr = d.row_mut(i);
                    let gr = g.row(i);
                    dr[start..start + len].copy_from_slice(gr);
                }
                self.accum(a, d);
            }
            Op::SliceRows(a, start, len) => {
                let (m, n) = self.shape(a);
                let mut d = Mat::zeros(m, n);
                for i in 0..len {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                self.accum(a, d);
            }
            Op::GatherRows(a, idx) => {
                let (m, n) = self.shape(a);
                let mut d = Mat::zeros(m, n);
                for (r, &i) in idx.iter().enumerate() {
                    let dr = d.row_mut(i);
                    let gr = g.row(r);
                    for j in 0..n {
                        dr[j] += gr[j];
                    }
                }
                self.accum(a, d);
            }
            Op::Reshape(a) => {
                let (m, n) = self.shape(a);
                self.accum(a, g.reshaped(m, n));
            }
            Op::ExclCumsumRows(a) => {
                let (m, n) = g.shape();
                let mut d = Mat::zeros(m, n);
                for i in 0..m {
                    let gr = g.row(i);
                    let dr = d.row_mut(i);
                    let mut acc = T::zero();
                    for j in (0..n).rev() {
                        dr[j] = acc;
                        acc += gr[j];
                    }
                }
                self.accum(a, d);
            }
        }
    }
}

impl<T> Node<T> {
    fn value_ref(&self) -> &Mat<T> {
        &self.value
    }
}

fn zip<T: Real>(a: &Mat<T>, b: &Mat<T>, f: impl Fn(T, T) -> T) -> Mat<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

/// `ln(1 + exp(s*x)) / s` without overflow for large `|x|`.
#[inline]
pub fn softplus_stable<T: Real>(x: T, s: T) -> T {
    let u = s * x;
    let z = T::zero();
    (u.max(z) + (-u.abs()).exp().ln_1p()) / s
}

/// `1 / (1 + exp(-s*x))` without overflow for large `|x|`.
#[inline]
pub fn sigmoid_stable<T: Real>(x: T, s: T) -> T {
    let u = s * x;
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_mat(rng: &mut StdRng, m: usize, n: usize, lo: f64, hi: f64) -> Mat<f64> {
        Mat::from_fn(m, n, |_, _| rng.gen_range(lo..hi))
    }

    /// Scalar readout used to turn any op output into a backward root: a
    /// fixed random projection followed by sum.
    fn project(tape: &mut Tape<f64>, out: NodeId, proj: &Mat<f64>) -> NodeId {
        let p = tape.constant(proj.clone()).unwrap();
        let prod = tape.mul(out, p).unwrap();
        tape.sum_all(prod).unwrap()
    }

    /// Checks d(readout)/d(input) for one op against central differences.
    fn check_op(
        name: &str,
        build: impl Fn(&mut Tape<f64>, NodeId) -> NodeId,
        input: Mat<f64>,
        tol: f64,
    ) {
        let mut rng = StdRng::seed_from_u64(0x5eed + input.len() as u64);
        let mut tape = Tape::new();
        let x = tape.var(input.clone()).unwrap();
        let out = build(&mut tape, x);
        let proj = rand_mat(&mut rng, tape.value(out).rows(), tape.value(out).cols(), -1.0, 1.0);
        let root = project(&mut tape, out, &proj);
        tape.backward(root).unwrap();
        let got = tape.grad(x).expect("input gradient").clone();

        let h = 1e-6;
        for i in 0..input.rows() {
            for j in 0..input.cols() {
                let eval = |v: f64| {
                    let mut p = input.clone();
                    *p.at_mut(i, j) = v;
                    let mut t = Tape::new();
                    let x = t.var(p).unwrap();
                    let out = build(&mut t, x);
                    let pr = t.constant(proj.clone()).unwrap();
                    let prod = t.mul(out, pr).unwrap();
                    let root = t.sum_all(prod).unwrap();
                    t.value(root).item()
                };
                let base = input.at(i, j);
                let fd = (eval(base + h) - eval(base - h)) / (2.0 * h);
                let ad = got.at(i, j);
                let denom = fd.abs().max(ad.abs()).max(1.0);
                assert!(
                    (ad - fd).abs() / denom < tol,
                    "{name}: grad mismatch at ({i},{j}): ad={ad} fd={fd}"
                );
            }
        }
    }

    #[test]
    fn elementwise_primitives_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let x = rand_mat(&mut rng, 3, 4, -1.5, 1.5);
        let pos = rand_mat(&mut rng, 3, 4, 0.2, 2.0);
        check_op("relu", |t, x| t.relu(x).unwrap(), x.clone(), 1e-5);
        check_op("softplus", |t, x| t.softplus(x, 3.0).unwrap(), x.clone(), 1e-5);
        check_op("sigmoid", |t, x| t.sigmoid(x, 2.0).unwrap(), x.clone(), 1e-5);
        check_op("exp", |t, x| t.exp(x).unwrap(), x.clone(), 1e-5);
        check_op("ln", |t, x| t.ln(x).unwrap(), pos.clone(), 1e-5);
        check_op("sin", |t, x| t.sin(x).unwrap(), x.clone(), 1e-5);
        check_op("cos", |t, x| t.cos(x).unwrap(), x.clone(), 1e-5);
        check_op("abs", |t, x| t.abs(x).unwrap(), x.clone(), 1e-5);
        check_op("sqrt", |t, x| t.sqrt(x).unwrap(), pos.clone(), 1e-5);
        check_op("recip", |t, x| t.recip(x).unwrap(), pos.clone(), 1e-5);
        check_op("scale", |t, x| t.scale(x, -1.7).unwrap(), x.clone(), 1e-5);
        check_op("add_const", |t, x| t.add_const(x, 0.4).unwrap(), x.clone(), 1e-5);
        check_op("clamp_min", |t, x| t.clamp_min(x, 0.1).unwrap(), x.clone(), 1e-5);
        check_op("clamp_max", |t, x| t.clamp_max(x, 0.5).unwrap(), x.clone(), 1e-5);
        check_op("square", |t, x| t.square(x).unwrap(), x.clone(), 1e-5);
    }

    #[test]
    fn structural_primitives_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        let x = rand_mat(&mut rng, 4, 6, -1.0, 1.0);
        check_op("softmax_rows", |t, x| t.softmax_rows(x).unwrap(), x.clone(), 1e-5);
        check_op("row_sum", |t, x| t.row_sum(x).unwrap(), x.clone(), 1e-5);
        check_op("row_max", |t, x| t.row_max(x).unwrap(), x.clone(), 1e-5);
        check_op("mean_all", |t, x| t.mean_all(x).unwrap(), x.clone(), 1e-5);
        check_op(
            "exclusive_cumsum_rows",
            |t, x| t.exclusive_cumsum_rows(x).unwrap(),
            x.clone(),
            1e-5,
        );
        check_op("slice_cols", |t, x| t.slice_cols(x, 1, 3).unwrap(), x.clone(), 1e-5);
        check_op("slice_rows", |t, x| t.slice_rows(x, 1, 2).unwrap(), x.clone(), 1e-5);
        check_op(
            "gather_rows",
            |t, x| t.gather_rows(x, vec![2, 0, 2, 3]).unwrap(),
            x.clone(),
            1e-5,
        );
        check_op("reshape", |t, x| t.reshape(x, 6, 4).unwrap(), x.clone(), 1e-5);
        check_op("row_l2_norm", |t, x| t.row_l2_norm(x).unwrap(), x.clone(), 1e-4);
        check_op("row_l1_norm", |t, x| t.row_l1_norm(x).unwrap(), x.clone(), 1e-4);
    }

    #[test]
    fn binary_primitives_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(13);
        let other = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        let x = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        let o = other.clone();
        check_op("add", move |t, x| {
            let b = t.constant(o.clone()).unwrap();
            t.add(x, b).unwrap()
        }, x.clone(), 1e-5);
        let o = other.clone();
        check_op("sub", move |t, x| {
            let b = t.constant(o.clone()).unwrap();
            t.sub(x, b).unwrap()
        }, x.clone(), 1e-5);
        let o = other.clone();
        check_op("mul", move |t, x| {
            let b = t.constant(o.clone()).unwrap();
            t.mul(x, b).unwrap()
        }, x.clone(), 1e-5);

        let mut rng = StdRng::seed_from_u64(14);
        let w = rand_mat(&mut rng, 5, 4, -1.0, 1.0);
        check_op("matmul_lhs", move |t, x| {
            let b = t.constant(w.clone()).unwrap();
            t.matmul(x, b).unwrap()
        }, x.clone(), 1e-5);
        let a = rand_mat(&mut rng, 4, 3, -1.0, 1.0);
        let xw = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        check_op("matmul_rhs", move |t, x| {
            let am = t.constant(a.clone()).unwrap();
            t.matmul(am, x).unwrap()
        }, xw, 1e-5);

        let bias = rand_mat(&mut rng, 1, 5, -1.0, 1.0);
        check_op("add_row_vec_lhs", move |t, x| {
            let b = t.constant(bias.clone()).unwrap();
            t.add_row_vec(x, b).unwrap()
        }, x.clone(), 1e-5);
        let base = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        let xb = rand_mat(&mut rng, 1, 5, -1.0, 1.0);
        check_op("add_row_vec_rhs", move |t, x| {
            let a = t.constant(base.clone()).unwrap();
            t.add_row_vec(a, x).unwrap()
        }, xb, 1e-5);

        let s = rand_mat(&mut rng, 3, 1, 0.3, 1.5);
        check_op("scale_rows_lhs", move |t, x| {
            let b = t.constant(s.clone()).unwrap();
            t.scale_rows(x, b).unwrap()
        }, x.clone(), 1e-5);
        let a2 = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        let xs = rand_mat(&mut rng, 3, 1, 0.2, 1.2);
        check_op("scale_rows_rhs", move |t, x| {
            let a = t.constant(a2.clone()).unwrap();
            t.scale_rows(a, x).unwrap()
        }, xs, 1e-5);

        let a3 = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        let xsc = Mat::scalar(0.73);
        check_op("mul_scalar_rhs", move |t, x| {
            let a = t.constant(a3.clone()).unwrap();
            t.mul_scalar(a, x).unwrap()
        }, xsc, 1e-5);

        let cc = rand_mat(&mut rng, 3, 2, -1.0, 1.0);
        check_op("concat_cols", move |t, x| {
            let b = t.constant(cc.clone()).unwrap();
            t.concat_cols(x, b).unwrap()
        }, x, 1e-5);
    }

    #[test]
    fn chained_graph_reuses_nodes_correctly() {
        // f(x) = sum((softplus(x W) W2 + x W)^2); W appears on two paths.
        let mut rng = StdRng::seed_from_u64(15);
        let x0 = rand_mat(&mut rng, 2, 3, -1.0, 1.0);
        let w = rand_mat(&mut rng, 3, 3, -0.8, 0.8);
        check_op("shared_path", move |t, x| {
            let wn = t.constant(w.clone()).unwrap();
            let h = t.matmul(x, wn).unwrap();
            let a = t.softplus(h, 1.0).unwrap();
            let b = t.matmul(a, wn).unwrap();
            let s = t.add(b, h).unwrap();
            t.square(s).unwrap()
        }, x0, 1e-4);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Mat::zeros(2, 3)).unwrap();
        let b = t.constant(Mat::zeros(3, 3)).unwrap();
        let err = t.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(3, 3)"), "got: {msg}");
    }

    #[test]
    fn non_finite_value_is_rejected_with_node_index() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Mat::scalar(-1.0)).unwrap();
        let err = t.ln(a).unwrap_err();
        assert!(matches!(err, TapeError::NonFinite { node: 1, .. }), "got {err:?}");
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::<f64>::new();
        let a = t.var(Mat::zeros(2, 2)).unwrap();
        let err = t.backward(a).unwrap_err();
        assert!(matches!(err, TapeError::NonScalarRoot { shape: (2, 2) }));
    }

    #[test]
    fn constant_subgraphs_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.var(Mat::scalar(2.0)).unwrap();
        let c = t.constant(Mat::scalar(3.0)).unwrap();
        let p = t.mul(a, c).unwrap();
        let root = t.sum_all(p).unwrap();
        t.backward(root).unwrap();
        assert_eq!(t.grad(a).unwrap().item(), 3.0);
        assert!(t.grad(c).is_none());
    }

    #[test]
    fn div_scalar_requires_positive_divisor() {
        let mut t = Tape::<f64>::new();
        let a = t.var(Mat::scalar(1.0)).unwrap();
        assert!(t.div_scalar(a, 0.0).is_err());
        assert!(t.div_scalar(a, -2.0).is_err());
        let y = t.div_scalar(a, 4.0).unwrap();
        assert_eq!(t.value(y).item(), 0.25);
    }

    #[test]
    fn works_at_f32_width() {
        let mut t = Tape::<f32>::new();
        let a = t.var(Mat::from_vec(1, 2, vec![0.5f32, -0.25])).unwrap();
        let sq = t.square(a).unwrap();
        let root = t.sum_all(sq).unwrap();
        t.backward(root).unwrap();
        let g = t.grad(a).unwrap();
        assert!((g.at(0, 0) - 1.0).abs() < 1e-6);
        assert!((g.at(0, 1) + 0.5).abs() < 1e-6);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable_at_large_inputs() {
        assert!((softplus_stable(500.0f64, 100.0) - 500.0).abs() < 1e-9);
        assert_eq!(softplus_stable(-500.0f64, 100.0), 0.0);
        assert_eq!(sigmoid_stable(500.0f64, 100.0), 1.0);
        assert_eq!(sigmoid_stable(-500.0f64, 100.0), 0.0);
        // Softplus dominates ReLU pointwise and converges to it.
        for &x in &[-2.0, -0.1, 0.0, 0.1, 2.0] {
            let sp = softplus_stable(x, 100.0);
            assert!(sp >= f64::max(x, 0.0));
            assert!(sp - f64::max(x, 0.0) < 0.01);
        }
    }
}

//! Reverse-mode gradient accumulation over an eagerly evaluated op tape.
//!
//! The model graph has fixed topology once the window length is known, so a
//! flat Wengert list of matrix ops is enough: every op computes its value on
//! push, and `backward` walks the list in reverse accumulating adjoints.
//! All tensors are dense `f64` matrices; vectors travel as n-by-1 or 1-by-n.

use ndarray::{s, Array2, Axis};

use super::ops;
use crate::nn::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    /// a (n×m) · b (m×p)
    MatMul(TensorId, TensorId),
    /// a (n×m) · bᵀ (m×p from p×m)
    MatMulTransB(TensorId, TensorId),
    /// a (n×k) + row vector b (1×k) broadcast over rows
    AddRow(TensorId, TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Softplus(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Neg(TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    ConcatCols(TensorId, TensorId),
    SliceCols {
        src: TensorId,
        start: usize,
        len: usize,
    },
    /// n×1 replicated to n×k
    BroadcastCol(TensorId),
    /// n×k → n×1 of ln Σ_k exp
    LogSumExpRows(TensorId),
    /// n×k → n×k of x − lse(x) per row
    LogSoftmaxRows(TensorId),
    /// full reduction to 1×1
    Sum(TensorId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Wengert list. Push ops, read values, then call [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the node, if it participated.
    pub fn get(&self, id: TensorId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf (an input or fixed matrix).
    pub fn constant(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), self.needs_grad(a) || self.needs_grad(b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), self.needs_grad(a) || self.needs_grad(b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), self.needs_grad(a) || self.needs_grad(b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b), self.needs_grad(a) || self.needs_grad(b))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), self.needs_grad(a) || self.needs_grad(b))
    }

    /// `a · bᵀ` — the natural orientation for out×in weight matrices.
    pub fn matmul_trans_b(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(
            v,
            Op::MatMulTransB(a, b),
            self.needs_grad(a) || self.needs_grad(b),
        )
    }

    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> TensorId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(
            v,
            Op::AddRow(a, row),
            self.needs_grad(a) || self.needs_grad(row),
        )
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).mapv(ops::sigmoid);
        self.push(v, Op::Sigmoid(a), self.needs_grad(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), self.needs_grad(a))
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).mapv(ops::softplus);
        self.push(v, Op::Softplus(a), self.needs_grad(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a), self.needs_grad(a))
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a), self.needs_grad(a))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a), self.needs_grad(a))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c), self.needs_grad(a))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a), self.needs_grad(a))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.nrows(), vb.nrows());
        let mut v = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
        v.slice_mut(s![.., ..va.ncols()]).assign(va);
        v.slice_mut(s![.., va.ncols()..]).assign(vb);
        self.push(
            v,
            Op::ConcatCols(a, b),
            self.needs_grad(a) || self.needs_grad(b),
        )
    }

    pub fn slice_cols(&mut self, src: TensorId, start: usize, len: usize) -> TensorId {
        let v = self.value(src).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { src, start, len }, self.needs_grad(src))
    }

    pub fn broadcast_col(&mut self, src: TensorId, cols: usize) -> TensorId {
        let vs = self.value(src);
        debug_assert_eq!(vs.ncols(), 1);
        let mut v = Array2::zeros((vs.nrows(), cols));
        for (mut row, &x) in v.rows_mut().into_iter().zip(vs.column(0)) {
            row.fill(x);
        }
        self.push(v, Op::BroadcastCol(src), self.needs_grad(src))
    }

    pub fn logsumexp_rows(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let mut v = Array2::zeros((va.nrows(), 1));
        for (i, row) in va.rows().into_iter().enumerate() {
            v[[i, 0]] = ops::logsumexp(row.as_slice().expect("row-major"));
        }
        self.push(v, Op::LogSumExpRows(a), self.needs_grad(a))
    }

    pub fn log_softmax_rows(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let mut v = va.clone();
        for mut row in v.rows_mut() {
            let lse = ops::logsumexp(row.as_slice().expect("row-major"));
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a), self.needs_grad(a))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a), self.needs_grad(a))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients, NnError> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::GraphNotRecorded);
        }
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(NnError::LossNotScalar {
                rows: self.nodes[loss.0].value.nrows(),
                cols: self.nodes[loss.0].value.ncols(),
            });
        }

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.accumulate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, idx: usize, gy: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let mut bump = |id: TensorId, delta: Array2<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                bump(a, gy.clone());
                bump(b, gy.clone());
            }
            Op::Sub(a, b) => {
                bump(a, gy.clone());
                bump(b, -gy);
            }
            Op::Mul(a, b) => {
                bump(a, gy * self.value(b));
                bump(b, gy * self.value(a));
            }
            Op::Div(a, b) => {
                let vb = self.value(b);
                bump(a, gy / vb);
                bump(b, -(gy * &node.value) / vb);
            }
            Op::MatMul(a, b) => {
                bump(a, gy.dot(&self.value(b).t()));
                bump(b, self.value(a).t().dot(gy));
            }
            Op::MatMulTransB(a, b) => {
                bump(a, gy.dot(self.value(b)));
                bump(b, gy.t().dot(self.value(a)));
            }
            Op::AddRow(a, row) => {
                bump(a, gy.clone());
                bump(row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                bump(a, gy * y * &(1.0 - y));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                bump(a, gy * &(1.0 - y * y));
            }
            Op::Softplus(a) => {
                bump(a, gy * &self.value(a).mapv(ops::sigmoid));
            }
            Op::Exp(a) => {
                bump(a, gy * &node.value);
            }
            Op::Ln(a) => {
                bump(a, gy / self.value(a));
            }
            Op::Neg(a) => {
                bump(a, -gy);
            }
            Op::Scale(a, c) => {
                bump(a, gy * c);
            }
            Op::AddScalar(a) => {
                bump(a, gy.clone());
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).ncols();
                bump(a, gy.slice(s![.., ..ca]).to_owned());
                bump(b, gy.slice(s![.., ca..]).to_owned());
            }
            Op::SliceCols { src, start, len } => {
                let vs = self.value(src);
                let mut g = Array2::zeros(vs.dim());
                g.slice_mut(s![.., start..start + len]).assign(gy);
                bump(src, g);
            }
            Op::BroadcastCol(src) => {
                bump(src, gy.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::LogSumExpRows(a) => {
                let va = self.value(a);
                let mut g = Array2::zeros(va.dim());
                for (i, row) in va.rows().into_iter().enumerate() {
                    let mut p = row.to_vec();
                    ops::softmax_in_place(&mut p);
                    for (j, pj) in p.into_iter().enumerate() {
                        g[[i, j]] = pj * gy[[i, 0]];
                    }
                }
                bump(a, g);
            }
            Op::LogSoftmaxRows(a) => {
                // dx = dy − softmax(x) · rowsum(dy)
                let va = self.value(a);
                let mut g = gy.clone();
                for (i, row) in va.rows().into_iter().enumerate() {
                    let mut p = row.to_vec();
                    ops::softmax_in_place(&mut p);
                    let rowsum: f64 = gy.row(i).sum();
                    for (j, pj) in p.into_iter().enumerate() {
                        g[[i, j]] -= pj * rowsum;
                    }
                }
                bump(a, g);
            }
            Op::Sum(a) => {
                bump(a, Array2::from_elem(self.value(a).dim(), gy[[0, 0]]));
            }
        }
    }
}

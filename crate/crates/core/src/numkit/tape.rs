//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation is evaluated eagerly when it is recorded, so a [`Tape`]
//! holds both the expression DAG and all forward values. Gradients are built
//! *symbolically*: [`Tape::grad`] appends the adjoint computation to the same
//! tape as ordinary nodes. The result can therefore be used inside a larger
//! expression and differentiated again, which is what one-step unrolled
//! optimization needs. [`Tape::backward`] is the numeric convenience wrapper
//! that does the same and then discards the appended nodes.
//!
//! Shape mismatches are programming errors and panic. Data-dependent failures
//! (degenerate rows, non-scalar roots) are reported as [`Error`]s.

use crate::error::{Error, Result};

use super::matrix::{Matrix, TAU_NORM};

/// Lower and upper clamp applied to arccos inputs.
pub const ARCCOS_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf {
        trainable: bool,
    },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Transpose(NodeId),
    Pow(NodeId, f64),
    Log(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Clamp(NodeId, f64, f64),
    /// Elementwise arccos of the clamped input.
    Arccos(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Largest entry; ties go to the lowest flat index.
    Max {
        input: NodeId,
        winner: usize,
    },
    /// Largest of several scalar nodes; ties go to the earliest.
    MaxOf {
        items: Vec<NodeId>,
        winner: usize,
    },
    RowSum(NodeId),
    BroadcastCols(NodeId, usize),
    BroadcastScalar(NodeId, usize, usize),
    RowNormalize(NodeId),
    /// `out[i][j] = |a_i - b_j|^2`.
    CrossSqDist(NodeId, NodeId),
    Row(NodeId, usize),
    ScatterRow {
        input: NodeId,
        row: usize,
        rows: usize,
    },
    StackRows(Vec<NodeId>),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf { .. } => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | CrossSqDist(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a, _)
            | Transpose(a)
            | Pow(a, _)
            | Log(a)
            | Exp(a)
            | Relu(a)
            | Clamp(a, _, _)
            | Arccos(a)
            | Sum(a)
            | Mean(a)
            | RowSum(a)
            | BroadcastCols(a, _)
            | BroadcastScalar(a, _, _)
            | RowNormalize(a)
            | Row(a, _) => {
                vec![*a]
            }
            Max { input, .. } | ScatterRow { input, .. } => vec![*input],
            MaxOf { items, .. } | StackRows(items) => items.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Gradients of a scalar root with respect to trainable leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradient {
    entries: Vec<(NodeId, Matrix)>,
}

impl Gradient {
    pub fn get(&self, leaf: NodeId) -> Option<&Matrix> {
        self.entries
            .iter()
            .find(|(id, _)| *id == leaf)
            .map(|(_, m)| m)
    }

    /// Gradient for `leaf`; panics if the leaf is unknown.
    pub fn wrt(&self, leaf: NodeId) -> &Matrix {
        self.get(leaf)
            .expect("leaf is not a trainable node of this tape")
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Matrix)> {
        self.entries.iter().map(|(id, m)| (*id, m))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id).item()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    /// A trainable input.
    pub fn var(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Leaf { trainable: true }, m)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Leaf { trainable: false }, m)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).hadamard(self.value(b));
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a, c), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn pow(&mut self, a: NodeId, p: f64) -> NodeId {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(Op::Pow(a, p), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn arccos(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .map(|x| x.clamp(-ARCCOS_CLAMP, ARCCOS_CLAMP).acos());
        self.push(Op::Arccos(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(Op::Mean(a), v)
    }

    pub fn max(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data();
        let mut winner = 0;
        for (i, &x) in data.iter().enumerate() {
            if x > data[winner] {
                winner = i;
            }
        }
        let v = Matrix::scalar(data[winner]);
        self.push(Op::Max { input: a, winner }, v)
    }

    /// Maximum over scalar nodes.
    pub fn max_of(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "max_of needs at least one item");
        let mut winner = 0;
        for (i, &id) in items.iter().enumerate() {
            if self.scalar_value(id) > self.scalar_value(items[winner]) {
                winner = i;
            }
        }
        let v = Matrix::scalar(self.scalar_value(items[winner]));
        self.push(
            Op::MaxOf {
                items: items.to_vec(),
                winner,
            },
            v,
        )
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let v = Matrix::from_raw(m.rows(), 1, m.row_iter().map(|r| r.iter().sum()).collect());
        self.push(Op::RowSum(a), v)
    }

    /// Repeats an `r x 1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        let m = self.value(a);
        assert_eq!(m.cols(), 1, "broadcast_cols expects a column vector");
        let v = Matrix::from_fn(m.rows(), cols, |i, _| m.get(i, 0));
        self.push(Op::BroadcastCols(a, cols), v)
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = Matrix::filled(rows, cols, self.value(a).item());
        self.push(Op::BroadcastScalar(a, rows, cols), v)
    }

    /// Row-normalization without a degeneracy check.
    fn row_normalize_unchecked(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let norms = m.row_norms();
        let v = Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) / norms[i]);
        self.push(Op::RowNormalize(a), v)
    }

    /// Scales each row to unit norm, failing on rows shorter than [`TAU_NORM`].
    pub fn rowwise_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        for (row, norm) in self.value(a).row_norms().into_iter().enumerate() {
            if !(norm >= TAU_NORM) {
                return Err(Error::DegenerateRow { row, norm });
            }
        }
        Ok(self.row_normalize_unchecked(a))
    }

    /// Squared Euclidean distances between the rows of `a` and the rows of `b`.
    pub fn cross_sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.cols(), mb.cols(), "cross_sq_dist column mismatch");
        let v = Matrix::from_fn(ma.rows(), mb.rows(), |i, j| {
            ma.row(i)
                .iter()
                .zip(mb.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        });
        self.push(Op::CrossSqDist(a, b), v)
    }

    /// Squared pairwise distances between the rows of `a`.
    pub fn pairwise_sq_dist(&mut self, a: NodeId) -> NodeId {
        self.cross_sq_dist(a, a)
    }

    /// Angles between rows of `a` and rows of `b` (both assumed unit-norm).
    pub fn arccos_of_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bt = self.transpose(b);
        let dots = self.matmul(a, bt);
        self.arccos(dots)
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = Matrix::from_raw(1, self.value(a).cols(), self.value(a).row(i).to_vec());
        self.push(Op::Row(a, i), v)
    }

    fn scatter_row(&mut self, a: NodeId, row: usize, rows: usize) -> NodeId {
        let m = self.value(a);
        let v = Matrix::from_fn(
            rows,
            m.cols(),
            |i, j| if i == row { m.get(0, j) } else { 0.0 },
        );
        self.push(
            Op::ScatterRow {
                input: a,
                row,
                rows,
            },
            v,
        )
    }

    /// Stacks `1 x c` nodes into a `k x c` matrix.
    pub fn stack_rows(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty());
        let cols = self.value(items[0]).cols();
        let mut data = Vec::with_capacity(items.len() * cols);
        for &id in items {
            let m = self.value(id);
            assert_eq!(m.shape(), (1, cols), "stack_rows expects 1 x {cols} rows");
            data.extend_from_slice(m.data());
        }
        let v = Matrix::from_raw(items.len(), cols, data);
        self.push(Op::StackRows(items.to_vec()), v)
    }

    /// Appends the computation of `d root / d wrt[k]` to the tape and returns
    /// the node ids holding those gradients. The returned nodes are ordinary
    /// tape nodes, so they may themselves be differentiated.
    pub fn grad(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let n = root.0 + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] && self.nodes[i].op.parents().iter().any(|p| needs[p.0]) {
                needs[i] = true;
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if needs[root.0] {
            adjoint[root.0] = Some(self.constant(Matrix::scalar(1.0)));
        }
        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !needs[i] {
                continue;
            }
            for (parent, contrib) in self.vjp(NodeId(i), g, &needs) {
                adjoint[parent.0] = Some(match adjoint[parent.0] {
                    Some(prev) => self.add(prev, contrib),
                    None => contrib,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(id) => id,
                None => {
                    let (r, c) = self.shape(w);
                    self.constant(Matrix::zeros(r, c))
                }
            })
            .collect())
    }

    /// Numeric gradients of `root` with respect to the given leaves. The tape is
    /// left exactly as it was.
    pub fn grad_values(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Matrix>> {
        let len = self.nodes.len();
        let result = self
            .grad(root, wrt)
            .map(|ids| ids.iter().map(|&id| self.value(id).clone()).collect());
        self.nodes.truncate(len);
        result
    }

    /// Gradient of a scalar `root` with respect to every trainable leaf
    /// recorded before it.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradient> {
        let leaves: Vec<NodeId> = (0..=root.0.min(self.nodes.len().saturating_sub(1)))
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf { trainable: true }))
            .map(NodeId)
            .collect();
        let values = self.grad_values(root, &leaves)?;
        Ok(Gradient {
            entries: leaves.into_iter().zip(values).collect(),
        })
    }

    /// Vector-Jacobian products of node `id` with adjoint `g`, one entry per
    /// parent that needs a gradient. Built entirely from tape ops.
    fn vjp(&mut self, id: NodeId, g: NodeId, needs: &[bool]) -> Vec<(NodeId, NodeId)> {
        let need = |p: NodeId| needs[p.0];
        let op = self.nodes[id.0].op.clone();
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                if need(a) {
                    let bt = self.transpose(b);
                    out.push((a, self.matmul(g, bt)));
                }
                if need(b) {
                    let at = self.transpose(a);
                    out.push((b, self.matmul(at, g)));
                }
            }
            Op::Add(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    out.push((a, self.mul(g, b)));
                }
                if need(b) {
                    out.push((b, self.mul(g, a)));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::AddScalar(a, _) => out.push((a, g)),
            Op::Transpose(a) => out.push((a, self.transpose(g))),
            Op::Pow(a, p) => {
                let d = self.pow(a, p - 1.0);
                let d = self.scale(d, p);
                out.push((a, self.mul(g, d)));
            }
            Op::Log(a) => {
                let inv = self.pow(a, -1.0);
                out.push((a, self.mul(g, inv)));
            }
            Op::Exp(a) => out.push((a, self.mul(g, id))),
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                out.push((a, self.mul(g, mask)));
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value(a)
                    .map(|x| if x >= lo && x <= hi { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                out.push((a, self.mul(g, mask)));
            }
            Op::Arccos(a) => {
                // d/dx acos(clamp(x)) = -(1 - c^2)^(-1/2) inside the clamp, 0 outside.
                let c = self.clamp(a, -ARCCOS_CLAMP, ARCCOS_CLAMP);
                let c2 = self.mul(c, c);
                let one_minus = self.scale(c2, -1.0);
                let one_minus = self.add_scalar(one_minus, 1.0);
                let inv_sqrt = self.pow(one_minus, -0.5);
                let d = self.scale(inv_sqrt, -1.0);
                let gd = self.mul(g, d);
                let mask = self
                    .value(a)
                    .map(|x| if x.abs() <= ARCCOS_CLAMP { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                out.push((a, self.mul(gd, mask)));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(a);
                out.push((a, self.broadcast_scalar(g, r, c)));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(a);
                let b = self.broadcast_scalar(g, r, c);
                out.push((a, self.scale(b, 1.0 / (r * c) as f64)));
            }
            Op::Max { input, winner } => {
                let (r, c) = self.shape(input);
                let onehot =
                    Matrix::from_fn(r, c, |i, j| if i * c + j == winner { 1.0 } else { 0.0 });
                let onehot = self.constant(onehot);
                let b = self.broadcast_scalar(g, r, c);
                out.push((input, self.mul(b, onehot)));
            }
            Op::MaxOf { items, winner } => {
                if need(items[winner]) {
                    out.push((items[winner], g));
                }
            }
            Op::RowSum(a) => {
                let c = self.shape(a).1;
                out.push((a, self.broadcast_cols(g, c)));
            }
            Op::BroadcastCols(a, _) => out.push((a, self.row_sum(g))),
            Op::BroadcastScalar(a, _, _) => out.push((a, self.sum(g))),
            Op::RowNormalize(a) => {
                // y = x / |x|;  dx = (g - y * <g, y>) / |x|
                let c = self.shape(a).1;
                let gy = self.mul(g, id);
                let t = self.row_sum(gy);
                let t = self.broadcast_cols(t, c);
                let yt = self.mul(id, t);
                let proj = self.sub(g, yt);
                let sq = self.mul(a, a);
                let sq = self.row_sum(sq);
                let inv_norm = self.pow(sq, -0.5);
                let inv_norm = self.broadcast_cols(inv_norm, c);
                out.push((a, self.mul(proj, inv_norm)));
            }
            Op::CrossSqDist(a, b) => {
                if need(a) {
                    let c = self.shape(a).1;
                    let rs = self.row_sum(g);
                    let rs = self.broadcast_cols(rs, c);
                    let lhs = self.mul(rs, a);
                    let rhs = self.matmul(g, b);
                    let d = self.sub(lhs, rhs);
                    out.push((a, self.scale(d, 2.0)));
                }
                if need(b) {
                    let c = self.shape(b).1;
                    let gt = self.transpose(g);
                    let cs = self.row_sum(gt);
                    let cs = self.broadcast_cols(cs, c);
                    let lhs = self.mul(cs, b);
                    let rhs = self.matmul(gt, a);
                    let d = self.sub(lhs, rhs);
                    out.push((b, self.scale(d, 2.0)));
                }
            }
            Op::Row(a, i) => {
                let rows = self.shape(a).0;
                out.push((a, self.scatter_row(g, i, rows)));
            }
            Op::ScatterRow { input, row, .. } => out.push((input, self.row(g, row))),
            Op::StackRows(items) => {
                for (k, item) in items.into_iter().enumerate() {
                    if need(item) {
                        out.push((item, self.row(g, k)));
                    }
                }
            }
        }
        out
    }
}

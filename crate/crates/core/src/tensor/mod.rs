//! Dense f64 matrices, a tape-based reverse-mode autodiff, and the AdamW
//! update rule.
//!
//! The tape records one batch's computation; [`Tape::backward`] seeds the
//! scalar root with 1 plus any gradients injected mid-graph (used to stitch
//! in sensitivities computed outside the tape) and accumulates gradients in
//! one reverse sweep.
//!
//! Reductions across rows (the slot axis in the perception stack) sum their
//! addends in sorted order, so permuting rows permutes the outputs of
//! [`Tape::softmax_axis0`] and [`Tape::logsumexp_axis0`] bit-exactly.

use std::collections::BTreeMap;

/// A row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape does not match data length");
        Tensor { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Sum in ascending order, making the result independent of the order the
/// addends arrived in.
fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

fn accumulate(grad: &mut Tensor, delta: &[f64]) {
    for (g, &d) in grad.data.iter_mut().zip(delta) {
        *g += d;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    AddBias,
    SubRow,
    MulCols,
    DivCols,
    MatMul,
    MatMulNT,
    Relu,
    Sigmoid,
    SoftmaxAxis0,
    SoftmaxAxis1,
    LogSumExpAxis0,
    SumAxis1,
    SumAll,
    Reshape,
    ConcatCols,
    RepeatRows(usize),
    TileRows(usize),
    SliceCols(usize),
    L2NormSq,
}

#[derive(Debug)]
struct TapeNode {
    op: Op,
    inputs: [usize; 2],
    value: Tensor,
    grad: Tensor,
}

const NO_INPUT: usize = usize::MAX;

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    injected: Vec<(usize, Tensor)>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, op: Op, inputs: [usize; 2], value: Tensor) -> NodeId {
        let grad = Tensor::zeros(value.rows, value.cols);
        self.nodes.push(TapeNode { op, inputs, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, [NO_INPUT, NO_INPUT], value)
    }

    fn binary_elementwise(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.rows, va.cols, data);
        self.push(op, [a.0, b.0], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| c * x).collect());
        self.push(Op::Scale(c), [a.0, NO_INPUT], value)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| x + c).collect());
        self.push(Op::AddScalar, [a.0, NO_INPUT], value)
    }

    /// Matrix plus a `1 x C` bias broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        assert_eq!(vb.rows, 1, "bias must be a row vector");
        assert_eq!(va.cols, vb.cols, "bias width mismatch");
        let mut value = va.clone();
        for r in 0..va.rows {
            for c in 0..va.cols {
                value.data[r * va.cols + c] += vb.data[c];
            }
        }
        self.push(Op::AddBias, [a.0, bias.0], value)
    }

    /// Matrix minus a `1 x C` row broadcast over rows.
    pub fn sub_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(vb.rows, 1, "subtrahend must be a row vector");
        assert_eq!(va.cols, vb.cols, "row width mismatch");
        let mut value = va.clone();
        for r in 0..va.rows {
            for c in 0..va.cols {
                value.data[r * va.cols + c] -= vb.data[c];
            }
        }
        self.push(Op::SubRow, [a.0, row.0], value)
    }

    /// Matrix times an `R x 1` column broadcast across columns.
    pub fn mul_cols(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[col.0].value);
        assert_eq!(vb.cols, 1, "multiplier must be a column vector");
        assert_eq!(va.rows, vb.rows, "column height mismatch");
        let mut value = va.clone();
        for r in 0..va.rows {
            for c in 0..va.cols {
                value.data[r * va.cols + c] *= vb.data[r];
            }
        }
        self.push(Op::MulCols, [a.0, col.0], value)
    }

    /// Matrix divided by an `R x 1` column broadcast across columns.
    pub fn div_cols(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[col.0].value);
        assert_eq!(vb.cols, 1, "divisor must be a column vector");
        assert_eq!(va.rows, vb.rows, "column height mismatch");
        let mut value = va.clone();
        for r in 0..va.rows {
            for c in 0..va.cols {
                value.data[r * va.cols + c] /= vb.data[r];
            }
        }
        self.push(Op::DivCols, [a.0, col.0], value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.cols, vb.rows, "matmul inner dimension mismatch");
        let (n, k, m) = (va.rows, va.cols, vb.cols);
        let mut value = Tensor::zeros(n, m);
        for r in 0..n {
            for i in 0..k {
                let x = va.data[r * k + i];
                if x == 0.0 {
                    continue;
                }
                for c in 0..m {
                    value.data[r * m + c] += x * vb.data[i * m + c];
                }
            }
        }
        self.push(Op::MatMul, [a.0, b.0], value)
    }

    /// `A * B^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.cols, vb.cols, "matmul_nt inner dimension mismatch");
        let (n, k, m) = (va.rows, va.cols, vb.rows);
        let mut value = Tensor::zeros(n, m);
        for r in 0..n {
            for c in 0..m {
                let mut acc = 0.0;
                for i in 0..k {
                    acc += va.data[r * k + i] * vb.data[c * k + i];
                }
                value.data[r * m + c] = acc;
            }
        }
        self.push(Op::MatMulNT, [a.0, b.0], value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value =
            Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| x.max(0.0)).collect());
        self.push(Op::Relu, [a.0, NO_INPUT], value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Tensor::from_vec(
            va.rows,
            va.cols,
            va.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
        );
        self.push(Op::Sigmoid, [a.0, NO_INPUT], value)
    }

    /// Softmax down each column (across rows). Row-permutation equivariant
    /// bit for bit: the denominator is a sorted sum.
    pub fn softmax_axis0(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(n, m);
        for c in 0..m {
            let mut column_max = f64::NEG_INFINITY;
            for r in 0..n {
                column_max = column_max.max(va.data[r * m + c]);
            }
            let exps: Vec<f64> =
                (0..n).map(|r| (va.data[r * m + c] - column_max).exp()).collect();
            let denom = sorted_sum(exps.clone());
            for (r, e) in exps.iter().enumerate() {
                value.data[r * m + c] = e / denom;
            }
        }
        self.push(Op::SoftmaxAxis0, [a.0, NO_INPUT], value)
    }

    /// Softmax along each row.
    pub fn softmax_axis1(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(n, m);
        for r in 0..n {
            let row = &va.data[r * m..(r + 1) * m];
            let row_max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - row_max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                value.data[r * m + c] = e / denom;
            }
        }
        self.push(Op::SoftmaxAxis1, [a.0, NO_INPUT], value)
    }

    /// `log sum exp` down each column, yielding a `1 x C` row. The inner
    /// sum is sorted, so the result is row-permutation invariant bit for
    /// bit.
    pub fn logsumexp_axis0(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(1, m);
        for c in 0..m {
            let mut column_max = f64::NEG_INFINITY;
            for r in 0..n {
                column_max = column_max.max(va.data[r * m + c]);
            }
            let exps: Vec<f64> =
                (0..n).map(|r| (va.data[r * m + c] - column_max).exp()).collect();
            value.data[c] = column_max + sorted_sum(exps).ln();
        }
        self.push(Op::LogSumExpAxis0, [a.0, NO_INPUT], value)
    }

    /// Row sums as an `R x 1` column.
    pub fn sum_axis1(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(n, 1);
        for r in 0..n {
            value.data[r] = va.data[r * m..(r + 1) * m].iter().sum();
        }
        self.push(Op::SumAxis1, [a.0, NO_INPUT], value)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Tensor::scalar(va.data.iter().sum());
        self.push(Op::SumAll, [a.0, NO_INPUT], value)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert_eq!(va.numel(), rows * cols, "reshape changes element count");
        let value = Tensor::from_vec(rows, cols, va.data.clone());
        self.push(Op::Reshape, [a.0, NO_INPUT], value)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.rows, vb.rows, "concat_cols row mismatch");
        let (n, ca, cb) = (va.rows, va.cols, vb.cols);
        let mut value = Tensor::zeros(n, ca + cb);
        for r in 0..n {
            value.data[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&va.data[r * ca..(r + 1) * ca]);
            value.data[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&vb.data[r * cb..(r + 1) * cb]);
        }
        self.push(Op::ConcatCols, [a.0, b.0], value)
    }

    /// Each row repeated `times` times in place: row `i` lands at rows
    /// `i * times ..= i * times + times - 1`.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(n * times, m);
        for r in 0..n {
            for t in 0..times {
                value.data[(r * times + t) * m..(r * times + t + 1) * m]
                    .copy_from_slice(&va.data[r * m..(r + 1) * m]);
            }
        }
        self.push(Op::RepeatRows(times), [a.0, NO_INPUT], value)
    }

    /// The whole matrix stacked `times` times: row `i` of copy `j` lands at
    /// row `j * R + i`.
    pub fn tile_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(n * times, m);
        for t in 0..times {
            value.data[t * n * m..(t + 1) * n * m].copy_from_slice(&va.data);
        }
        self.push(Op::TileRows(times), [a.0, NO_INPUT], value)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert!(start + len <= va.cols, "column slice out of range");
        let (n, m) = (va.rows, va.cols);
        let mut value = Tensor::zeros(n, len);
        for r in 0..n {
            value.data[r * len..(r + 1) * len]
                .copy_from_slice(&va.data[r * m + start..r * m + start + len]);
        }
        self.push(Op::SliceCols(start), [a.0, NO_INPUT], value)
    }

    pub fn l2_norm_sq(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Tensor::scalar(va.data.iter().map(|&x| x * x).sum());
        self.push(Op::L2NormSq, [a.0, NO_INPUT], value)
    }

    /// Record a gradient seed for a mid-graph node; it is added to the
    /// node's adjoint at the start of the next [`Tape::backward`].
    pub fn inject_gradient(&mut self, id: NodeId, grad: Tensor) {
        let v = &self.nodes[id.0].value;
        assert_eq!((v.rows, v.cols), (grad.rows, grad.cols), "gradient shape mismatch");
        self.injected.push((id.0, grad));
    }

    /// Reverse sweep from a scalar root. The root's adjoint is seeded with
    /// 1, injected gradients are added to their nodes, and every node's
    /// gradient is accumulated.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.nodes[root.0].value.numel(), 1, "backward root must be scalar");
        for node in &mut self.nodes {
            node.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad.data[0] = 1.0;
        for (id, seed) in std::mem::take(&mut self.injected) {
            for (g, s) in self.nodes[id].grad.data.iter_mut().zip(&seed.data) {
                *g += s;
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if node.grad.data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let [ia, ib] = node.inputs;
            let g = &node.grad;
            let v = &node.value;
            match node.op {
                Op::Leaf => {}
                Op::Add => {
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += gi;
                    }
                    for (db, &gi) in before[ib].grad.data.iter_mut().zip(&g.data) {
                        *db += gi;
                    }
                }
                Op::Sub => {
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += gi;
                    }
                    for (db, &gi) in before[ib].grad.data.iter_mut().zip(&g.data) {
                        *db -= gi;
                    }
                }
                Op::Mul => {
                    let (va, vb) = (&before[ia].value, &before[ib].value);
                    let da: Vec<f64> =
                        g.data.iter().zip(&vb.data).map(|(&gi, &y)| gi * y).collect();
                    let db: Vec<f64> =
                        g.data.iter().zip(&va.data).map(|(&gi, &x)| gi * x).collect();
                    accumulate(&mut before[ia].grad, &da);
                    accumulate(&mut before[ib].grad, &db);
                }
                Op::Scale(c) => {
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += c * gi;
                    }
                }
                Op::AddScalar => {
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += gi;
                    }
                }
                Op::AddBias => {
                    let m = v.cols;
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += gi;
                    }
                    for r in 0..v.rows {
                        for c in 0..m {
                            before[ib].grad.data[c] += g.data[r * m + c];
                        }
                    }
                }
                Op::SubRow => {
                    let m = v.cols;
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += gi;
                    }
                    for r in 0..v.rows {
                        for c in 0..m {
                            before[ib].grad.data[c] -= g.data[r * m + c];
                        }
                    }
                }
                Op::MulCols => {
                    let m = v.cols;
                    let (va, vb) = (&before[ia].value, &before[ib].value);
                    let mut da = vec![0.0; va.data.len()];
                    let mut db = vec![0.0; vb.data.len()];
                    for r in 0..v.rows {
                        let s = vb.data[r];
                        for c in 0..m {
                            let gi = g.data[r * m + c];
                            da[r * m + c] = gi * s;
                            db[r] += gi * va.data[r * m + c];
                        }
                    }
                    accumulate(&mut before[ia].grad, &da);
                    accumulate(&mut before[ib].grad, &db);
                }
                Op::DivCols => {
                    let m = v.cols;
                    let (va, vb) = (&before[ia].value, &before[ib].value);
                    let mut da = vec![0.0; va.data.len()];
                    let mut db = vec![0.0; vb.data.len()];
                    for r in 0..v.rows {
                        let s = vb.data[r];
                        for c in 0..m {
                            let gi = g.data[r * m + c];
                            da[r * m + c] = gi / s;
                            db[r] -= gi * v.data[r * m + c] / s;
                        }
                    }
                    accumulate(&mut before[ia].grad, &da);
                    accumulate(&mut before[ib].grad, &db);
                }
                Op::MatMul => {
                    let (va, vb) = (&before[ia].value, &before[ib].value);
                    let (n, k) = (va.rows, va.cols);
                    let m = vb.cols;
                    let mut da = vec![0.0; va.data.len()];
                    let mut db = vec![0.0; vb.data.len()];
                    for r in 0..n {
                        for i in 0..k {
                            let mut acc = 0.0;
                            for c in 0..m {
                                acc += g.data[r * m + c] * vb.data[i * m + c];
                            }
                            da[r * k + i] = acc;
                        }
                    }
                    for i in 0..k {
                        for c in 0..m {
                            let mut acc = 0.0;
                            for r in 0..n {
                                acc += va.data[r * k + i] * g.data[r * m + c];
                            }
                            db[i * m + c] = acc;
                        }
                    }
                    accumulate(&mut before[ia].grad, &da);
                    accumulate(&mut before[ib].grad, &db);
                }
                Op::MatMulNT => {
                    let (va, vb) = (&before[ia].value, &before[ib].value);
                    let (n, k) = (va.rows, va.cols);
                    let m = vb.rows;
                    let mut da = vec![0.0; va.data.len()];
                    let mut db = vec![0.0; vb.data.len()];
                    for r in 0..n {
                        for i in 0..k {
                            let mut acc = 0.0;
                            for c in 0..m {
                                acc += g.data[r * m + c] * vb.data[c * k + i];
                            }
                            da[r * k + i] = acc;
                        }
                    }
                    for c in 0..m {
                        for i in 0..k {
                            let mut acc = 0.0;
                            for r in 0..n {
                                acc += g.data[r * m + c] * va.data[r * k + i];
                            }
                            db[c * k + i] = acc;
                        }
                    }
                    accumulate(&mut before[ia].grad, &da);
                    accumulate(&mut before[ib].grad, &db);
                }
                Op::Relu => {
                    let a_part = &mut before[ia];
                    for k in 0..g.data.len() {
                        if a_part.value.data[k] > 0.0 {
                            a_part.grad.data[k] += g.data[k];
                        }
                    }
                }
                Op::Sigmoid => {
                    let a_part = &mut before[ia];
                    for k in 0..g.data.len() {
                        let y = v.data[k];
                        a_part.grad.data[k] += g.data[k] * y * (1.0 - y);
                    }
                }
                Op::SoftmaxAxis0 => {
                    let a_part = &mut before[ia];
                    let (n, m) = (v.rows, v.cols);
                    for c in 0..m {
                        let mut dot = 0.0;
                        for r in 0..n {
                            dot += g.data[r * m + c] * v.data[r * m + c];
                        }
                        for r in 0..n {
                            let y = v.data[r * m + c];
                            a_part.grad.data[r * m + c] += y * (g.data[r * m + c] - dot);
                        }
                    }
                }
                Op::SoftmaxAxis1 => {
                    let a_part = &mut before[ia];
                    let (n, m) = (v.rows, v.cols);
                    for r in 0..n {
                        let mut dot = 0.0;
                        for c in 0..m {
                            dot += g.data[r * m + c] * v.data[r * m + c];
                        }
                        for c in 0..m {
                            let y = v.data[r * m + c];
                            a_part.grad.data[r * m + c] += y * (g.data[r * m + c] - dot);
                        }
                    }
                }
                Op::LogSumExpAxis0 => {
                    let a_part = &mut before[ia];
                    let (n, m) = (a_part.value.rows, a_part.value.cols);
                    for c in 0..m {
                        for r in 0..n {
                            let w = (a_part.value.data[r * m + c] - v.data[c]).exp();
                            a_part.grad.data[r * m + c] += g.data[c] * w;
                        }
                    }
                }
                Op::SumAxis1 => {
                    let a_part = &mut before[ia];
                    let m = a_part.value.cols;
                    for r in 0..a_part.value.rows {
                        for c in 0..m {
                            a_part.grad.data[r * m + c] += g.data[r];
                        }
                    }
                }
                Op::SumAll => {
                    let a_part = &mut before[ia];
                    for da in a_part.grad.data.iter_mut() {
                        *da += g.data[0];
                    }
                }
                Op::Reshape => {
                    for (da, &gi) in before[ia].grad.data.iter_mut().zip(&g.data) {
                        *da += gi;
                    }
                }
                Op::ConcatCols => {
                    let (ca, cb) = (before[ia].value.cols, before[ib].value.cols);
                    let n = v.rows;
                    let mut da = vec![0.0; before[ia].value.data.len()];
                    let mut db = vec![0.0; before[ib].value.data.len()];
                    for r in 0..n {
                        for c in 0..ca {
                            da[r * ca + c] = g.data[r * (ca + cb) + c];
                        }
                        for c in 0..cb {
                            db[r * cb + c] = g.data[r * (ca + cb) + ca + c];
                        }
                    }
                    accumulate(&mut before[ia].grad, &da);
                    accumulate(&mut before[ib].grad, &db);
                }
                Op::RepeatRows(times) => {
                    let a_part = &mut before[ia];
                    let (n, m) = (a_part.value.rows, a_part.value.cols);
                    for r in 0..n {
                        for t in 0..times {
                            for c in 0..m {
                                a_part.grad.data[r * m + c] += g.data[(r * times + t) * m + c];
                            }
                        }
                    }
                }
                Op::TileRows(times) => {
                    let a_part = &mut before[ia];
                    let (n, m) = (a_part.value.rows, a_part.value.cols);
                    for t in 0..times {
                        for r in 0..n {
                            for c in 0..m {
                                a_part.grad.data[r * m + c] += g.data[(t * n + r) * m + c];
                            }
                        }
                    }
                }
                Op::SliceCols(start) => {
                    let a_part = &mut before[ia];
                    let (n, m, w) = (v.rows, a_part.value.cols, v.cols);
                    for r in 0..n {
                        for c in 0..w {
                            a_part.grad.data[r * m + start + c] += g.data[r * w + c];
                        }
                    }
                }
                Op::L2NormSq => {
                    let a_part = &mut before[ia];
                    for k in 0..a_part.value.data.len() {
                        a_part.grad.data[k] += 2.0 * a_part.value.data[k] * g.data[0];
                    }
                }
            }
        }
    }
}

/// Registers every named parameter tensor as a tape leaf.
pub fn leaf_params(
    tape: &mut Tape,
    params: &BTreeMap<String, Tensor>,
) -> BTreeMap<String, NodeId> {
    params.iter().map(|(name, tensor)| (name.clone(), tape.leaf(tensor.clone()))).collect()
}

/// Reads the accumulated gradient of every named leaf back out of the tape.
pub fn collect_gradients(
    tape: &Tape,
    leaves: &BTreeMap<String, NodeId>,
) -> BTreeMap<String, Tensor> {
    leaves.iter().map(|(name, &id)| (name.clone(), tape.grad(id).clone())).collect()
}

/// Decoupled weight decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step_count: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (name, tensor) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            assert_eq!(tensor.numel(), grad.numel(), "gradient shape mismatch for {name}");
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; tensor.numel()]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; tensor.numel()]);
            for k in 0..tensor.numel() {
                let g = grad.data[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                tensor.data[k] -= self.learning_rate
                    * (m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * tensor.data[k]);
            }
        }
    }
}

use std::sync::Arc;

use super::matrix::{matmul_at_into, matmul_bt_into};
use super::{Matrix, NumericsError, Segments, Shape};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    ScaleBy(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Arc<Vec<usize>>),
    RowSoftmax(usize),
    SegmentSoftmax(usize, Arc<Segments>),
    SegmentWeightedSum { values: usize, weights: usize, rows: Arc<Vec<usize>>, segments: Arc<Segments> },
    SegmentMean(usize, Arc<Segments>),
    LeakyRelu(usize, f64),
    Elu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sum(usize),
    SqSum(usize),
    PathEncode { nodes: Vec<usize>, relations: Vec<usize>, instances: Arc<Vec<usize>> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run operation record. Build a fresh tape for every forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
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

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Tensor {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, false)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Gradient of the last backward pass, if `t` was reached.
    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.id).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Tensor {
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node { value, requires_grad, op });
        Tensor { id, rows, cols }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn v(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    fn unary(&mut self, a: Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let value = self.v(a).map(f);
        let rg = self.rg(&[a.id]);
        self.push(value, rg, op)
    }

    fn same_shape(op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(NumericsError::shape(op, a.shape(), b.shape()));
        }
        Ok(())
    }

    fn zip(&mut self, a: Tensor, b: Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.v(a), self.v(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Matrix::from_vec(a.rows, a.cols, data).expect("shape checked");
        let rg = self.rg(&[a.id, b.id]);
        self.push(value, rg, op)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.v(a).matmul(self.v(b))?;
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(value, rg, Op::MatMul(a.id, b.id)))
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let value = self.v(a).transpose();
        let rg = self.rg(&[a.id]);
        self.push(value, rg, Op::Transpose(a.id))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a.id, b.id), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a.id, b.id), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("hadamard", a, b)?;
        Ok(self.zip(a, b, Op::Hadamard(a.id, b.id), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        self.unary(a, Op::Scale(a.id, s), |x| x * s)
    }

    fn check_row(op: &'static str, a: Tensor, row: Tensor) -> Result<()> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(NumericsError::shape(op, a.shape(), row.shape()));
        }
        Ok(())
    }

    /// Adds a 1×C row to every row of `a`.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        Self::check_row("add_row", a, row)?;
        let mut value = self.v(a).clone();
        let r = self.v(row).data().to_vec();
        for i in 0..a.rows {
            for (x, y) in value.row_mut(i).iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.rg(&[a.id, row.id]);
        Ok(self.push(value, rg, Op::AddRow(a.id, row.id)))
    }

    /// Hadamard product of every row of `a` with a 1×C row.
    pub fn mul_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        Self::check_row("mul_row", a, row)?;
        let mut value = self.v(a).clone();
        let r = self.v(row).data().to_vec();
        for i in 0..a.rows {
            for (x, y) in value.row_mut(i).iter_mut().zip(&r) {
                *x *= y;
            }
        }
        let rg = self.rg(&[a.id, row.id]);
        Ok(self.push(value, rg, Op::MulRow(a.id, row.id)))
    }

    /// Multiplies `a` by the 1×1 tensor `s`.
    pub fn scale_by(&mut self, a: Tensor, s: Tensor) -> Result<Tensor> {
        if s.shape() != (1, 1) {
            return Err(NumericsError::shape("scale_by", a.shape(), s.shape()));
        }
        let k = self.v(s).data()[0];
        let value = self.v(a).map(|x| x * k);
        let rg = self.rg(&[a.id, s.id]);
        Ok(self.push(value, rg, Op::ScaleBy(a.id, s.id)))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.v(p)).collect();
        let value = Matrix::hconcat(&mats)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.rg(&ids);
        Ok(self.push(value, rg, Op::ConcatCols(ids)))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Tensor, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > a.cols {
            return Err(NumericsError::shape("slice_cols", a.shape(), (start, end)));
        }
        let src = self.v(a);
        let mut value = Matrix::zeros(a.rows, end - start);
        for r in 0..a.rows {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..end]);
        }
        let rg = self.rg(&[a.id]);
        Ok(self.push(value, rg, Op::SliceCols(a.id, start)))
    }

    pub fn gather_rows(&mut self, a: Tensor, idx: &Arc<Vec<usize>>) -> Result<Tensor> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows) {
            return Err(NumericsError::IndexOutOfRange { op: "gather_rows", index: bad, bound: a.rows });
        }
        let value = self.v(a).gather_rows(idx);
        let rg = self.rg(&[a.id]);
        Ok(self.push(value, rg, Op::GatherRows(a.id, Arc::clone(idx))))
    }

    pub fn row_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        if a.cols == 0 {
            return Err(NumericsError::EmptySegment { op: "row_softmax" });
        }
        let mut value = self.v(a).clone();
        let cols = a.cols;
        for r in 0..a.rows {
            softmax_at(value.data_mut(), r * cols..(r + 1) * cols);
        }
        let rg = self.rg(&[a.id]);
        Ok(self.push(value, rg, Op::RowSoftmax(a.id)))
    }

    /// Softmax down each column, independently within every segment.
    pub fn segment_softmax(&mut self, a: Tensor, segments: &Arc<Segments>) -> Result<Tensor> {
        if segments.total_rows() != a.rows {
            return Err(NumericsError::shape("segment_softmax", a.shape(), (segments.total_rows(), a.cols)));
        }
        if segments.n_segments() == 0 {
            return Err(NumericsError::EmptySegment { op: "segment_softmax" });
        }
        let mut value = self.v(a).clone();
        let cols = a.cols;
        for (_, range) in segments.iter() {
            for c in 0..cols {
                softmax_at(value.data_mut(), range.clone().map(|r| r * cols + c));
            }
        }
        let rg = self.rg(&[a.id]);
        Ok(self.push(value, rg, Op::SegmentSoftmax(a.id, Arc::clone(segments))))
    }

    /// `out[target(s)] = Σ_{r ∈ s} weights[r] · values[rows[r]]` for each segment `s`.
    ///
    /// `weights` is a column (one weight per segment row). Untargeted output rows are zero.
    pub fn segment_weighted_sum(
        &mut self,
        values: Tensor,
        rows: &Arc<Vec<usize>>,
        weights: Tensor,
        segments: &Arc<Segments>,
    ) -> Result<Tensor> {
        if weights.cols != 1 || weights.rows != rows.len() || segments.total_rows() != rows.len() {
            return Err(NumericsError::shape("segment_weighted_sum", (rows.len(), 1), weights.shape()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= values.rows) {
            return Err(NumericsError::IndexOutOfRange { op: "segment_weighted_sum", index: bad, bound: values.rows });
        }
        let (v, w) = (self.v(values), self.v(weights));
        let mut out = Matrix::zeros(segments.n_out(), values.cols);
        for (t, range) in segments.iter() {
            let out_row = out.row_mut(t);
            for r in range {
                let wr = w.data()[r];
                for (o, x) in out_row.iter_mut().zip(v.row(rows[r])) {
                    *o += wr * x;
                }
            }
        }
        let rg = self.rg(&[values.id, weights.id]);
        Ok(self.push(
            out,
            rg,
            Op::SegmentWeightedSum { values: values.id, weights: weights.id, rows: Arc::clone(rows), segments: Arc::clone(segments) },
        ))
    }

    /// Row mean within every segment.
    pub fn segment_mean(&mut self, a: Tensor, segments: &Arc<Segments>) -> Result<Tensor> {
        if segments.total_rows() != a.rows {
            return Err(NumericsError::shape("segment_mean", a.shape(), (segments.total_rows(), a.cols)));
        }
        let src = self.v(a);
        let mut out = Matrix::zeros(segments.n_out(), a.cols);
        for (t, range) in segments.iter() {
            let inv = 1.0 / range.len() as f64;
            for r in range {
                for (o, x) in out.row_mut(t).iter_mut().zip(src.row(r)) {
                    *o += x * inv;
                }
            }
        }
        let rg = self.rg(&[a.id]);
        Ok(self.push(out, rg, Op::SegmentMean(a.id, Arc::clone(segments))))
    }

    /// Column means (1×C).
    pub fn mean_rows(&mut self, a: Tensor) -> Result<Tensor> {
        let seg = Arc::new(Segments::single(a.rows)?);
        self.segment_mean(a, &seg)
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        self.unary(a, Op::LeakyRelu(a.id, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn elu(&mut self, a: Tensor) -> Tensor {
        self.unary(a, Op::Elu(a.id), |x| if x > 0.0 { x } else { x.exp_m1() })
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        self.unary(a, Op::Tanh(a.id), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.unary(a, Op::Sigmoid(a.id), sigmoid)
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.v(a).data().iter().sum();
        let rg = self.rg(&[a.id]);
        self.push(Matrix::scalar(s), rg, Op::Sum(a.id))
    }

    /// Squared L2 norm of all entries.
    pub fn sq_sum(&mut self, a: Tensor) -> Tensor {
        let s = self.v(a).data().iter().map(|x| x * x).sum();
        let rg = self.rg(&[a.id]);
        self.push(Matrix::scalar(s), rg, Op::SqSum(a.id))
    }

    /// Left-fold path encoder over `L = nodes.len()` positions:
    /// `acc₁ = x₁`, `acc_{i+1} = acc_i ⊙ r_i + x_{i+1}`, output `acc_L / L`.
    ///
    /// `instances` is a flat row-major table with stride `L`; entry `(s, i)` indexes
    /// a row of `nodes[i]`. `relations` are `L − 1` row vectors.
    pub fn path_encode(&mut self, nodes: &[Tensor], relations: &[Tensor], instances: &Arc<Vec<usize>>) -> Result<Tensor> {
        let len = nodes.len();
        if len < 2 || relations.len() != len - 1 || instances.len() % len != 0 {
            return Err(NumericsError::InvalidSegments(format!(
                "path_encode: {len} positions, {} relations, {} indices",
                relations.len(),
                instances.len()
            )));
        }
        let width = nodes[0].cols;
        if let Some(t) = nodes.iter().find(|t| t.cols != width) {
            return Err(NumericsError::shape("path_encode", nodes[0].shape(), t.shape()));
        }
        if let Some(r) = relations.iter().find(|r| r.shape() != (1, width)) {
            return Err(NumericsError::shape("path_encode", (1, width), r.shape()));
        }
        for (k, &i) in instances.iter().enumerate() {
            let bound = nodes[k % len].rows;
            if i >= bound {
                return Err(NumericsError::IndexOutOfRange { op: "path_encode", index: i, bound });
            }
        }
        let n = instances.len() / len;
        let mut out = Matrix::zeros(n, width);
        let inv = 1.0 / len as f64;
        for s in 0..n {
            let idx = &instances[s * len..(s + 1) * len];
            let row = out.row_mut(s);
            row.copy_from_slice(self.nodes[nodes[0].id].value.row(idx[0]));
            for i in 1..len {
                let rel = self.nodes[relations[i - 1].id].value.data();
                let x = self.nodes[nodes[i].id].value.row(idx[i]);
                for ((o, r), xv) in row.iter_mut().zip(rel).zip(x) {
                    *o = *o * r + xv;
                }
            }
            row.iter_mut().for_each(|o| *o *= inv);
        }
        let node_ids: Vec<usize> = nodes.iter().map(|t| t.id).collect();
        let rel_ids: Vec<usize> = relations.iter().map(|t| t.id).collect();
        let rg = self.rg(&node_ids) || self.rg(&rel_ids);
        Ok(self.push(out, rg, Op::PathEncode { nodes: node_ids, relations: rel_ids, instances: Arc::clone(instances) }))
    }

    /// Reverse-mode pass from a 1×1 `loss`.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.shape() != (1, 1) {
            return Err(NumericsError::NotScalar { shape: loss.shape() });
        }
        if self.backward_done {
            return Err(NumericsError::BackwardTwice);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.id].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.id] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    matmul_bt_into(g, &nodes[*b].value, da);
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    matmul_at_into(&nodes[*a].value, g, db);
                }
            }
            Op::Transpose(a) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    da.axpy(1.0, &g.transpose());
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    da.axpy(1.0, g);
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    db.axpy(1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    da.axpy(1.0, g);
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    db.axpy(-1.0, g);
                }
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                if let Some(da) = acc(grads, nodes, *a) {
                    zip3(da, g, vb, |d, g, y| *d += g * y);
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    zip3(db, g, va, |d, g, x| *d += g * x);
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    da.axpy(*s, g);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    da.axpy(1.0, g);
                }
                if let Some(dr) = acc(grads, nodes, *row) {
                    for r in 0..g.rows() {
                        for (d, x) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (&nodes[*a].value, &nodes[*row].value);
                if let Some(da) = acc(grads, nodes, *a) {
                    for r in 0..g.rows() {
                        for ((d, gv), y) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(vr.data()) {
                            *d += gv * y;
                        }
                    }
                }
                if let Some(dr) = acc(grads, nodes, *row) {
                    for r in 0..g.rows() {
                        for ((d, gv), x) in dr.data_mut().iter_mut().zip(g.row(r)).zip(va.row(r)) {
                            *d += gv * x;
                        }
                    }
                }
            }
            Op::ScaleBy(a, s) => {
                let k = nodes[*s].value.data()[0];
                if let Some(da) = acc(grads, nodes, *a) {
                    da.axpy(k, g);
                }
                if let Some(ds) = acc(grads, nodes, *s) {
                    let dot: f64 = g.data().iter().zip(nodes[*a].value.data()).map(|(x, y)| x * y).sum();
                    ds.data_mut()[0] += dot;
                }
            }
            Op::ConcatCols(ids) => {
                let mut off = 0;
                for &p in ids {
                    let w = nodes[p].value.cols();
                    if let Some(dp) = acc(grads, nodes, p) {
                        for r in 0..g.rows() {
                            for (d, x) in dp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *d += x;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for r in 0..g.rows() {
                        let w = g.cols();
                        for (d, x) in da.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for (o, &src) in idx.iter().enumerate() {
                        for (d, x) in da.row_mut(src).iter_mut().zip(g.row(o)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::RowSoftmax(a) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for r in 0..g.rows() {
                        let (y, gr) = (out.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in da.row_mut(r).iter_mut().zip(y).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, segments) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    let cols = g.cols();
                    for (_, range) in segments.iter() {
                        for c in 0..cols {
                            let dot: f64 = range.clone().map(|r| out.get(r, c) * g.get(r, c)).sum();
                            for r in range.clone() {
                                let cur = da.get(r, c);
                                da.set(r, c, cur + out.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                }
            }
            Op::SegmentWeightedSum { values, weights, rows, segments } => {
                let (v, w) = (&nodes[*values].value, &nodes[*weights].value);
                if let Some(dv) = acc(grads, nodes, *values) {
                    for (t, range) in segments.iter() {
                        for r in range {
                            let wr = w.data()[r];
                            for (d, x) in dv.row_mut(rows[r]).iter_mut().zip(g.row(t)) {
                                *d += wr * x;
                            }
                        }
                    }
                }
                if let Some(dw) = acc(grads, nodes, *weights) {
                    for (t, range) in segments.iter() {
                        for r in range {
                            let dot: f64 = g.row(t).iter().zip(v.row(rows[r])).map(|(a, b)| a * b).sum();
                            dw.data_mut()[r] += dot;
                        }
                    }
                }
            }
            Op::SegmentMean(a, segments) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for (t, range) in segments.iter() {
                        let inv = 1.0 / range.len() as f64;
                        for r in range {
                            for (d, x) in da.row_mut(r).iter_mut().zip(g.row(t)) {
                                *d += x * inv;
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = &nodes[*a].value;
                if let Some(da) = acc(grads, nodes, *a) {
                    zip3(da, g, x, |d, g, x| *d += if x > 0.0 { g } else { slope * g });
                }
            }
            Op::Elu(a) => {
                let x = &nodes[*a].value;
                if let Some(da) = acc(grads, nodes, *a) {
                    zip3(da, g, x, |d, g, x| *d += if x > 0.0 { g } else { g * x.exp() });
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    zip3(da, g, out, |d, g, y| *d += g * (1.0 - y * y));
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = acc(grads, nodes, *a) {
                    zip3(da, g, out, |d, g, y| *d += g * y * (1.0 - y));
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                if let Some(da) = acc(grads, nodes, *a) {
                    da.data_mut().iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SqSum(a) => {
                let s = g.data()[0];
                let x = &nodes[*a].value;
                if let Some(da) = acc(grads, nodes, *a) {
                    for (d, xv) in da.data_mut().iter_mut().zip(x.data()) {
                        *d += 2.0 * s * xv;
                    }
                }
            }
            Op::PathEncode { nodes: inputs, relations, instances } => {
                self.backprop_path_encode(inputs, relations, instances, g, grads);
            }
        }
    }

    fn backprop_path_encode(
        &self,
        inputs: &[usize],
        relations: &[usize],
        instances: &[usize],
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) {
        let nodes = &self.nodes;
        let len = inputs.len();
        let width = g.cols();
        let inv = 1.0 / len as f64;
        let mut prefix = vec![0.0; len * width];
        let mut upstream = vec![0.0; width];
        let mut rel_grads: Vec<Vec<f64>> = vec![vec![0.0; width]; relations.len()];
        let mut node_grads: Vec<Option<Matrix>> = inputs
            .iter()
            .map(|&id| nodes[id].requires_grad.then(|| Matrix::zeros(nodes[id].value.rows(), width)))
            .collect();
        for s in 0..g.rows() {
            let idx = &instances[s * len..(s + 1) * len];
            prefix[..width].copy_from_slice(nodes[inputs[0]].value.row(idx[0]));
            for i in 1..len {
                let rel = nodes[relations[i - 1]].value.data();
                let x = nodes[inputs[i]].value.row(idx[i]);
                let (done, rest) = prefix.split_at_mut(i * width);
                let prev = &done[(i - 1) * width..];
                for c in 0..width {
                    rest[c] = prev[c] * rel[c] + x[c];
                }
            }
            for (u, gv) in upstream.iter_mut().zip(g.row(s)) {
                *u = gv * inv;
            }
            for i in (1..len).rev() {
                if let Some(dx) = node_grads[i].as_mut() {
                    for (d, u) in dx.row_mut(idx[i]).iter_mut().zip(&upstream) {
                        *d += u;
                    }
                }
                let rel = nodes[relations[i - 1]].value.data();
                let prev = &prefix[(i - 1) * width..i * width];
                for c in 0..width {
                    rel_grads[i - 1][c] += upstream[c] * prev[c];
                    upstream[c] *= rel[c];
                }
            }
            if let Some(dx) = node_grads[0].as_mut() {
                for (d, u) in dx.row_mut(idx[0]).iter_mut().zip(&upstream) {
                    *d += u;
                }
            }
        }
        for (&id, dx) in inputs.iter().zip(node_grads) {
            if let (Some(dx), Some(dst)) = (dx, acc(grads, nodes, id)) {
                dst.axpy(1.0, &dx);
            }
        }
        for (&id, dr) in relations.iter().zip(rel_grads) {
            if let Some(dst) = acc(grads, nodes, id) {
                for (d, x) in dst.data_mut().iter_mut().zip(dr) {
                    *d += x;
                }
            }
        }
    }
}

fn acc<'g>(grads: &'g mut [Option<Matrix>], nodes: &[Node], id: usize) -> Option<&'g mut Matrix> {
    if !nodes[id].requires_grad {
        return None;
    }
    let (r, c) = nodes[id].value.shape();
    Some(grads[id].get_or_insert_with(|| Matrix::zeros(r, c)))
}

fn zip3(d: &mut Matrix, g: &Matrix, x: &Matrix, f: impl Fn(&mut f64, f64, f64)) {
    for ((dv, &gv), &xv) in d.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
        f(dv, gv, xv);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over the entries of `data` at `idx`.
fn softmax_at(data: &mut [f64], idx: impl Iterator<Item = usize> + Clone) {
    let max = idx.clone().map(|i| data[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for i in idx.clone() {
        data[i] = (data[i] - max).exp();
        total += data[i];
    }
    for i in idx {
        data[i] /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hadamard_and_softmax_examples() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::row_vector(&[1.0, 2.0]));
        let b = t.constant(Matrix::row_vector(&[3.0, 4.0]));
        let h = t.hadamard(a, b).unwrap();
        assert_eq!(t.value(h).data(), &[3.0, 8.0]);

        let z = t.constant(Matrix::row_vector(&[0.0, 0.0, 0.0]));
        let s = t.row_softmax(z).unwrap();
        for &v in t.value(s).data() {
            assert!(approx(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn leaky_relu_and_identity_matmul() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(-1.0));
        let y = t.leaky_relu(x, 0.01);
        assert!(approx(t.value(y).data()[0], -0.01, 1e-15));

        let i2 = t.constant(Matrix::identity(2));
        let m = Matrix::from_rows(&[vec![1.5, -2.0, 0.25], vec![4.0, 0.0, 7.0]]).unwrap();
        let xm = t.constant(m.clone());
        let p = t.matmul(i2, xm).unwrap();
        assert_eq!(t.value(p), &m);
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(3, 2));
        let err = t.add(a, b).unwrap_err();
        assert_eq!(err, NumericsError::ShapeMismatch { op: "add", left: (2, 3), right: (3, 2) });
        let e = t.constant(Matrix::zeros(1, 0));
        assert!(matches!(t.row_softmax(e), Err(NumericsError::EmptySegment { .. })));
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(&[3.0]));
        let xx = t.hadamard(x, x).unwrap();
        let loss = t.sum(xx);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(0.0));
        let y = t.sigmoid(x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn backward_guards() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(NumericsError::NotScalar { shape: (1, 2) })));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(NumericsError::BackwardTwice));
        t.zero_grad();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_subexpression_gradients_sum() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(&[0.3, -1.2]));
        let a = t.tanh(x);
        let b = t.scale(x, 3.0);
        let c = t.add(a, b).unwrap();
        let loss = t.sum(c);
        t.backward(loss).unwrap();
        let g = t.grad(x).unwrap();
        for (i, &xv) in [0.3f64, -1.2].iter().enumerate() {
            let expect = 1.0 - xv.tanh().powi(2) + 3.0;
            assert!(approx(g.data()[i], expect, 1e-14));
        }
    }

    #[test]
    fn segment_softmax_normalizes_each_group() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0f64.ln(), 2.0], vec![5.0, -1.0]]).unwrap());
        let seg = Arc::new(Segments::from_sorted_keys(&[0, 0, 1], 2).unwrap());
        let y = t.segment_softmax(x, &seg).unwrap();
        let v = t.value(y);
        assert!(approx(v.get(0, 0), 0.25, 1e-15));
        assert!(approx(v.get(1, 0), 0.75, 1e-15));
        assert_eq!(v.get(2, 0), 1.0);
        assert!(approx(v.get(0, 1) + v.get(1, 1), 1.0, 1e-15));
    }

    #[test]
    fn path_encode_matches_composed_ops() {
        let mut t = Tape::new();
        let h = t.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap());
        let r1 = t.constant(Matrix::row_vector(&[2.0, 2.0]));
        let r2 = t.constant(Matrix::row_vector(&[1.0, 3.0]));
        let inst = Arc::new(vec![0, 1, 2]);
        let m = t.path_encode(&[h, h, h], &[r1, r2], &inst).unwrap();
        let v = t.value(m);
        assert!(approx(v.get(0, 0), 1.0, 1e-15));
        assert!(approx(v.get(0, 1), 4.0 / 3.0, 1e-15));
    }
}

//! Tape-style reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a node
//! holding its forward value; because inputs always precede their consumers,
//! the backward sweep is a single reverse walk over the tape.

use std::collections::HashMap;
use std::rc::Rc;

use super::matrix::{gemm, gemm_nt, gemm_tn};
use super::{Matrix, NumericsError, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Groups = Rc<Vec<Vec<usize>>>;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Rc<Matrix>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    SegmentMean(Var, Groups),
    SegmentMax(Var, Vec<Option<usize>>),
    SumAll(Var),
    PickEntries(Var, Rc<Vec<(usize, usize)>>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to every parameter of a [`ParamStore`].
///
/// Parameters the loss does not depend on hold zero matrices.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId::from_index(i), g))
    }

    /// Name-free view for the optimizer.
    pub fn as_slice(&self) -> &[Matrix] {
        &self.grads
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad1(&self, a: Var) -> bool {
        self.nodes[a.0].needs_grad
    }

    fn grad2(&self, a: Var, b: Var) -> bool {
        self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Leaf for a learnable parameter. Repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(Op::Param(id), store.value(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.grad2(a, b);
        Ok(self.push(Op::MatMul(a, b), value, g))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(NumericsError::Shape(format!(
                "matmul_nt {:?} by transpose of {:?}",
                am.shape(),
                bm.shape()
            )));
        }
        let mut value = Matrix::zeros(am.rows(), bm.rows());
        gemm_nt(am, bm, &mut value);
        let g = self.grad2(a, b);
        Ok(self.push(Op::MatMulNt(a, b), value, g))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let g = self.grad1(a);
        self.push(Op::Transpose(a), value, g)
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NumericsError> {
        let (am, bm) = (self.value(a), self.value(b));
        am.same_shape(bm, what)?;
        let data = am.data().iter().zip(bm.data()).map(|(x, y)| f(*x, *y)).collect();
        Matrix::new(am.rows(), am.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip(a, b, "add", |x, y| x + y)?;
        let g = self.grad2(a, b);
        Ok(self.push(Op::Add(a, b), value, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip(a, b, "sub", |x, y| x - y)?;
        let g = self.grad2(a, b);
        Ok(self.push(Op::Sub(a, b), value, g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip(a, b, "mul", |x, y| x * y)?;
        let g = self.grad2(a, b);
        Ok(self.push(Op::Mul(a, b), value, g))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip(a, b, "div", |x, y| x / y)?;
        let g = self.grad2(a, b);
        Ok(self.push(Op::Div(a, b), value, g))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(NumericsError::Shape(format!(
                "add_row {:?} with {:?}",
                am.shape(),
                rm.shape()
            )));
        }
        let mut value = am.clone();
        let bias = rm.data().to_vec();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        let g = self.grad2(a, row);
        Ok(self.push(Op::AddRow(a, row), value, g))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Rc<Matrix>) -> Result<Var, NumericsError> {
        let am = self.value(a);
        am.same_shape(&c, "mul_const")?;
        let data = am.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Matrix::new(am.rows(), am.cols(), data)?;
        let g = self.grad1(a);
        Ok(self.push(Op::MulConst(a, c), value, g))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let g = self.grad1(a);
        self.push(Op::Scale(a, s), value, g)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let g = self.grad1(a);
        self.push(Op::AddScalar(a), value, g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        let g = self.grad1(a);
        self.push(Op::Relu(a), value, g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let g = self.grad1(a);
        self.push(Op::Sigmoid(a), value, g)
    }

    /// Natural log. Inputs must be positive.
    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let g = self.grad1(a);
        self.push(Op::Ln(a), value, g)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let g = self.grad1(a);
        self.push(Op::Clamp(a, lo, hi), value, g)
    }

    /// Row-wise softmax. Entries equal to `-inf` get exactly zero weight; a
    /// row with no finite entry is an error.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).softmax_rows()?;
        let g = self.grad1(a);
        Ok(self.push(Op::SoftmaxRows(a), value, g))
    }

    /// Row-wise softmax of `a + mask`, where `mask` holds only `0` and `-inf`.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &Matrix) -> Result<Var, NumericsError> {
        let am = self.value(a);
        am.same_shape(mask, "masked_softmax_rows")?;
        let mut logits = am.clone();
        for (l, m) in logits.data_mut().iter_mut().zip(mask.data()) {
            *l += m;
        }
        let value = logits.softmax_rows()?;
        let g = self.grad1(a);
        Ok(self.push(Op::SoftmaxRows(a), value, g))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let g = self.grad1(a);
        self.push(Op::LogSoftmaxRows(a), value, g)
    }

    /// Per-row normalization to zero mean and unit variance (with variance
    /// floor [`LAYER_NORM_EPS`]), followed by `gain` and `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.value(p).shape() != (1, cols) {
                return Err(NumericsError::Shape(format!(
                    "layer_norm {name} {:?} for {cols} columns",
                    self.value(p).shape()
                )));
            }
        }
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (gm, bm) = (self.value(gain).data(), self.value(bias).data());
        let mut value = normalized.clone();
        for r in 0..rows {
            for ((v, g), b) in value.row_mut(r).iter_mut().zip(gm).zip(bm) {
                *v = *v * g + b;
            }
        }
        let g = self.grad1(x) || self.grad2(gain, bias);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            value,
            g,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut cols = 0;
        for p in parts {
            let m = self.value(*p);
            if m.rows() != rows {
                return Err(NumericsError::Shape(format!(
                    "concat_cols: {} rows vs {rows}",
                    m.rows()
                )));
            }
            cols += m.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            let w = m.cols();
            for r in 0..rows {
                value.row_mut(r)[offset..offset + w].copy_from_slice(m.row(r));
            }
            offset += w;
        }
        let g = parts.iter().any(|p| self.grad1(*p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, g))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let am = self.value(a);
        if start + len > am.cols() {
            return Err(NumericsError::Shape(format!(
                "slice_cols {start}..{} of {} columns",
                start + len,
                am.cols()
            )));
        }
        let mut value = Matrix::zeros(am.rows(), len);
        for r in 0..am.rows() {
            value.row_mut(r).copy_from_slice(&am.row(r)[start..start + len]);
        }
        let g = self.grad1(a);
        Ok(self.push(Op::SliceCols(a, start), value, g))
    }

    /// Output row `i` is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<Vec<usize>>) -> Result<Var, NumericsError> {
        let am = self.value(a);
        let mut value = Matrix::zeros(index.len(), am.cols());
        for (i, &src) in index.iter().enumerate() {
            if src >= am.rows() {
                return Err(NumericsError::Shape(format!(
                    "gather_rows index {src} out of {} rows",
                    am.rows()
                )));
            }
            value.row_mut(i).copy_from_slice(am.row(src));
        }
        let g = self.grad1(a);
        Ok(self.push(Op::GatherRows(a, index), value, g))
    }

    /// Output row `g` is the mean of the rows listed in `groups[g]`, summed in
    /// list order. Empty groups produce zero rows.
    pub fn segment_mean(&mut self, a: Var, groups: Groups) -> Result<Var, NumericsError> {
        let am = self.value(a);
        let cols = am.cols();
        let mut value = Matrix::zeros(groups.len(), cols);
        for (gi, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let out = value.row_mut(gi);
            for &m in members {
                if m >= am.rows() {
                    return Err(NumericsError::Shape(format!(
                        "segment_mean member {m} out of {} rows",
                        am.rows()
                    )));
                }
                for (o, v) in out.iter_mut().zip(am.row(m)) {
                    *o += v;
                }
            }
            let inv = 1.0 / members.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let g = self.grad1(a);
        Ok(self.push(Op::SegmentMean(a, groups), value, g))
    }

    /// Output row `g` is the columnwise max over rows in `groups[g]`; empty
    /// groups produce zero rows.
    pub fn segment_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var, NumericsError> {
        let am = self.value(a);
        let cols = am.cols();
        let mut value = Matrix::zeros(groups.len(), cols);
        let mut winners = vec![None; groups.len() * cols];
        for (gi, members) in groups.iter().enumerate() {
            for &m in members {
                if m >= am.rows() {
                    return Err(NumericsError::Shape(format!(
                        "segment_max member {m} out of {} rows",
                        am.rows()
                    )));
                }
                let row = am.row(m);
                for c in 0..cols {
                    let slot = &mut winners[gi * cols + c];
                    if slot.is_none_or(|w: usize| row[c] > am.get(w, c)) {
                        *slot = Some(m);
                    }
                }
            }
            for c in 0..cols {
                if let Some(w) = winners[gi * cols + c] {
                    value.set(gi, c, am.get(w, c));
                }
            }
        }
        let g = self.grad1(a);
        Ok(self.push(Op::SegmentMax(a, winners), value, g))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let g = self.grad1(a);
        self.push(Op::SumAll(a), value, g)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column vector of the entries `a[r][c]` for each `(r, c)`.
    pub fn pick_entries(&mut self, a: Var, at: Rc<Vec<(usize, usize)>>) -> Result<Var, NumericsError> {
        let am = self.value(a);
        let mut data = Vec::with_capacity(at.len());
        for &(r, c) in at.iter() {
            if r >= am.rows() || c >= am.cols() {
                return Err(NumericsError::Shape(format!(
                    "pick_entries ({r}, {c}) outside {:?}",
                    am.shape()
                )));
            }
            data.push(am.get(r, c));
        }
        let value = Matrix::column_vector(&data);
        let g = self.grad1(a);
        Ok(self.push(Op::PickEntries(a, at), value, g))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients, NumericsError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut out: Vec<Matrix> = store
            .iter()
            .map(|(_, _, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, dy, &mut grads, &mut out);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, dy: Matrix, grads: &mut [Option<Matrix>], out: &mut [Matrix]) {
        let mut send = |v: Var, g: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let acc = &mut out[id.index()];
                acc.data_mut().iter_mut().zip(dy.data()).for_each(|(a, b)| *a += b);
            }
            Op::MatMul(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                let mut da = Matrix::zeros(am.rows(), am.cols());
                gemm_nt(&dy, bm, &mut da);
                let mut db = Matrix::zeros(bm.rows(), bm.cols());
                gemm_tn(am, &dy, &mut db);
                send(*a, da);
                send(*b, db);
            }
            Op::MatMulNt(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                let mut da = Matrix::zeros(am.rows(), am.cols());
                gemm(&dy, bm, &mut da);
                let mut db = Matrix::zeros(bm.rows(), bm.cols());
                gemm_tn(&dy, am, &mut db);
                send(*a, da);
                send(*b, db);
            }
            Op::Transpose(a) => send(*a, dy.transpose()),
            Op::Add(a, b) => {
                send(*a, dy.clone());
                send(*b, dy);
            }
            Op::Sub(a, b) => {
                send(*b, dy.map(|v| -v));
                send(*a, dy);
            }
            Op::Mul(a, b) => {
                let da = elementwise(&dy, val(*b), |g, y| g * y);
                let db = elementwise(&dy, val(*a), |g, x| g * x);
                send(*a, da);
                send(*b, db);
            }
            Op::Div(a, b) => {
                let bm = val(*b);
                let da = elementwise(&dy, bm, |g, y| g / y);
                let q = elementwise(&node.value, bm, |z, y| z / y);
                let db = elementwise(&dy, &q, |g, r| -g * r);
                send(*a, da);
                send(*b, db);
            }
            Op::AddRow(a, row) => {
                let mut db = Matrix::zeros(1, dy.cols());
                for r in dy.iter_rows() {
                    db.data_mut().iter_mut().zip(r).for_each(|(acc, g)| *acc += g);
                }
                send(*row, db);
                send(*a, dy);
            }
            Op::MulConst(a, c) => send(*a, elementwise(&dy, c, |g, k| g * k)),
            Op::Scale(a, s) => send(*a, dy.map(|g| g * s)),
            Op::AddScalar(a) => send(*a, dy),
            Op::Relu(a) => send(*a, elementwise(&dy, val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(a) => send(*a, elementwise(&dy, &node.value, |g, y| g * y * (1.0 - y))),
            Op::Ln(a) => send(*a, elementwise(&dy, val(*a), |g, x| g / x)),
            Op::Clamp(a, lo, hi) => send(
                *a,
                elementwise(&dy, val(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
            ),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), dy.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for ((o, p), g) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (g - dot);
                    }
                }
                send(*a, dx);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), dy.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((o, ly), g) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = g - ly.exp() * total;
                    }
                }
                send(*a, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (rows, cols) = normalized.shape();
                let gm = val(*gain).data();
                let mut dgain = Matrix::zeros(1, cols);
                let mut dbias = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(rows, cols);
                let n = cols as f64;
                let mut dxhat = vec![0.0; cols];
                for r in 0..rows {
                    let (xh, g) = (normalized.row(r), dy.row(r));
                    for c in 0..cols {
                        dgain.data_mut()[c] += g[c] * xh[c];
                        dbias.data_mut()[c] += g[c];
                        dxhat[c] = g[c] * gm[c];
                    }
                    let sum: f64 = dxhat.iter().sum();
                    let dot: f64 = dxhat.iter().zip(xh).map(|(d, h)| d * h).sum();
                    let inv = inv_std[r];
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = inv / n * (n * dxhat[c] - sum - xh[c] * dot);
                    }
                }
                send(*gain, dgain);
                send(*bias, dbias);
                send(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let mut dp = Matrix::zeros(dy.rows(), w);
                    for r in 0..dy.rows() {
                        dp.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    send(*p, dp);
                }
            }
            Op::SliceCols(a, start) => {
                let am = val(*a);
                let mut da = Matrix::zeros(am.rows(), am.cols());
                let w = dy.cols();
                for r in 0..dy.rows() {
                    da.row_mut(r)[*start..*start + w].copy_from_slice(dy.row(r));
                }
                send(*a, da);
            }
            Op::GatherRows(a, index) => {
                let am = val(*a);
                let mut da = Matrix::zeros(am.rows(), am.cols());
                for (i, &src) in index.iter().enumerate() {
                    da.row_mut(src).iter_mut().zip(dy.row(i)).for_each(|(o, g)| *o += g);
                }
                send(*a, da);
            }
            Op::SegmentMean(a, groups) => {
                let am = val(*a);
                let mut da = Matrix::zeros(am.rows(), am.cols());
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / members.len() as f64;
                    for &m in members {
                        da.row_mut(m)
                            .iter_mut()
                            .zip(dy.row(gi))
                            .for_each(|(o, g)| *o += g * inv);
                    }
                }
                send(*a, da);
            }
            Op::SegmentMax(a, winners) => {
                let am = val(*a);
                let cols = am.cols();
                let mut da = Matrix::zeros(am.rows(), cols);
                for (slot, w) in winners.iter().enumerate() {
                    if let Some(src) = w {
                        let (gi, c) = (slot / cols, slot % cols);
                        da.data_mut()[src * cols + c] += dy.get(gi, c);
                    }
                }
                send(*a, da);
            }
            Op::SumAll(a) => {
                let am = val(*a);
                send(*a, Matrix::filled(am.rows(), am.cols(), dy.data()[0]));
            }
            Op::PickEntries(a, at) => {
                let am = val(*a);
                let mut da = Matrix::zeros(am.rows(), am.cols());
                for (i, &(r, c)) in at.iter().enumerate() {
                    da.data_mut()[r * am.cols() + c] += dy.data()[i];
                }
                send(*a, da);
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::new(a.rows(), a.cols(), data).expect("shapes checked on the forward pass")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

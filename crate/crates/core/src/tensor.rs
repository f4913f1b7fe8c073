//! Dense row-major matrices and a reverse-mode gradient tape.
//!
//! A [`Tape`] records every kernel applied during a forward pass as a node.
//! [`Tape::backward`] walks the nodes in reverse recording order,
//! accumulating adjoints with the analytic rule of each kernel. Only
//! the handful of kernels the encoders and losses need are provided; there
//! is no broadcasting beyond [`Tape::add_bias`] and [`Tape::scale_by`].
//!
//! Every forward result is checked for NaN/Inf and reported as
//! [`Error::Numeric`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Norm floor used by [`Tape::row_l2_normalize`].
pub const NORM_EPS: f64 = 1e-8;

/// Two-dimensional `f64` array, row-major. Vectors are `1 x n`, scalars
/// `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `a (m x k) * b (k x n)`.
fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m x k) * b^T` where `b` is `n x k`.
fn matmul_nt_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out.data[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T (k x m) * b (m x n)` where `a` is `m x k`.
fn matmul_tn_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(k, n);
    for i in 0..m {
        let brow = &b.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn row_norm(row: &[f64]) -> f64 {
    libm::sqrt(row.iter().map(|a| a * a).sum::<f64>())
}

/// Numerically stable `ln(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|&x| libm::exp(x - max)).sum::<f64>())
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Relu(NodeId),
    MeanRows(NodeId),
    SegmentMean(NodeId, Vec<usize>),
    Scale(NodeId, f64),
    ScaleBy(NodeId, NodeId),
    Exp(NodeId),
    RowL2Normalize(NodeId, f64),
    LogSumExpRows(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Transpose(NodeId),
    Diag(NodeId),
    RowDot(NodeId, NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
            requires_grad: true,
        }
    }
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Records one forward computation. Single-threaded; build a new tape per
/// step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
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

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records a named leaf whose gradient [`Tape::backward`] reports.
    pub fn param(&mut self, param: &Parameter) -> Result<NodeId> {
        if self.params.iter().any(|(n, _)| *n == param.name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter {}", param.name)));
        }
        let id = self.push_raw(param.tensor.clone(), Op::Leaf, param.requires_grad);
        self.params.push((param.name.clone(), id));
        Ok(id)
    }

    /// Registers every parameter in order and returns their node ids.
    pub fn params(&mut self, params: &[Parameter]) -> Result<Vec<NodeId>> {
        params.iter().map(|p| self.param(p)).collect()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::Shape {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(self.shape_err("matmul", a, b));
        }
        let v = matmul_raw(self.value(a), self.value(b));
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let v = matmul_nt_raw(self.value(a), self.value(b));
        self.push("matmul_nt", v, Op::MatMulNt(a, b), &[a, b])
    }

    /// Adds the `1 x n` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, n) = self.shape(x);
        if self.shape(b) != (1, n) {
            return Err(self.shape_err("add_bias", x, b));
        }
        let mut v = self.value(x).clone();
        let bias = self.value(b).data.clone();
        for r in 0..v.rows {
            for (o, bv) in v.row_mut(r).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        self.push("add_bias", v, Op::AddBias(x, b), &[x, b])
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        if self.shape(x) != self.shape(y) {
            return Err(self.shape_err("add", x, y));
        }
        let mut v = self.value(x).clone();
        v.add_assign(self.value(y));
        self.push("add", v, Op::Add(x, y), &[x, y])
    }

    pub fn sub(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        if self.shape(x) != self.shape(y) {
            return Err(self.shape_err("sub", x, y));
        }
        let mut v = self.value(x).clone();
        for (a, b) in v.data.iter_mut().zip(&self.value(y).data) {
            *a -= b;
        }
        self.push("sub", v, Op::Sub(x, y), &[x, y])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        self.push("relu", v, Op::Relu(x), &[x])
    }

    /// Column means of an `m x n` matrix as a `1 x n` row.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.rows == 0 {
            return Err(Error::EmptyInput);
        }
        let mut out = Tensor::zeros(1, t.cols);
        for r in 0..t.rows {
            for (o, v) in out.data.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        let m = t.rows as f64;
        for o in &mut out.data {
            *o /= m;
        }
        self.push("mean_rows", out, Op::MeanRows(x), &[x])
    }

    /// Row means over consecutive segments. `offsets` has one more entry
    /// than there are segments; segment `k` covers rows
    /// `offsets[k]..offsets[k + 1]`.
    pub fn segment_mean_rows(&mut self, x: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let t = self.value(x);
        let ok = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == t.rows
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Shape {
                op: "segment_mean_rows",
                left: t.shape(),
                right: (offsets.len(), *offsets.last().unwrap_or(&0)),
            });
        }
        let segments = offsets.len() - 1;
        let mut out = Tensor::zeros(segments, t.cols);
        for k in 0..segments {
            let len = (offsets[k + 1] - offsets[k]) as f64;
            let cols = t.cols;
            let orow = &mut out.data[k * cols..(k + 1) * cols];
            for r in offsets[k]..offsets[k + 1] {
                for (o, v) in orow.iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= len;
            }
        }
        self.push("segment_mean_rows", out, Op::SegmentMean(x, offsets.to_vec()), &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(x).map(|a| a * c);
        self.push("scale", v, Op::Scale(x, c), &[x])
    }

    /// Multiplies every entry of `x` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != (1, 1) {
            return Err(self.shape_err("scale_by", x, s));
        }
        let c = self.value(s).item();
        let v = self.value(x).map(|a| a * c);
        self.push("scale_by", v, Op::ScaleBy(x, s), &[x, s])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(libm::exp);
        self.push("exp", v, Op::Exp(x), &[x])
    }

    /// Divides each row by `max(|row|, eps)`. Rows with norm above `eps`
    /// come out with unit norm.
    pub fn row_l2_normalize(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("normalization eps must be > 0, got {eps}")));
        }
        let mut v = self.value(x).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let n = row_norm(row).max(eps);
            for a in row.iter_mut() {
                *a /= n;
            }
        }
        self.push("row_l2_normalize", v, Op::RowL2Normalize(x, eps), &[x])
    }

    /// Per-row log-sum-exp, `m x n -> m x 1`.
    pub fn log_sum_exp_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let data = (0..t.rows).map(|r| log_sum_exp(t.row(r))).collect();
        let v = Tensor::from_vec(t.rows, 1, data)?;
        self.push("log_sum_exp_rows", v, Op::LogSumExpRows(x), &[x])
    }

    /// Selects rows of `table` by index; indices may repeat.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: t.shape(),
                right: (bad, 0),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(ids.len(), t.cols, data)?;
        self.push("gather_rows", v, Op::GatherRows(table, ids.to_vec()), &[table])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transpose();
        self.push("transpose", v, Op::Transpose(x), &[x])
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.rows != t.cols {
            return Err(self.shape_err("diag", x, x));
        }
        let data = (0..t.rows).map(|i| t.get(i, i)).collect();
        let v = Tensor::from_vec(t.rows, 1, data)?;
        self.push("diag", v, Op::Diag(x), &[x])
    }

    /// Row-wise inner products, `m x n, m x n -> m x 1`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("row_dot", a, b));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let data = (0..ta.rows)
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let v = Tensor::from_vec(ta.rows, 1, data)?;
        self.push("row_dot", v, Op::RowDot(a, b), &[a, b])
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(softplus);
        self.push("softplus", v, Op::Softplus(x), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).data.iter().sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::EmptyInput);
        }
        let v = Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64);
        self.push("mean", v, Op::Mean(x), &[x])
    }

    /// Reverse sweep from the scalar `loss`. Returns a gradient for every
    /// registered parameter; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let adj = self.adjoints(loss)?;
        let mut grads = Gradients::new();
        for (name, id) in &self.params {
            let g = match &adj[id.0] {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = self.shape(*id);
                    Tensor::zeros(r, c)
                }
            };
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    fn adjoints(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(adj)
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, delta: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut adj[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_nt_raw(g, val(*b)));
                acc(*b, matmul_tn_raw(val(*a), g));
            }
            Op::MatMulNt(a, b) => {
                acc(*a, matmul_raw(g, val(*b)));
                acc(*b, matmul_tn_raw(g, val(*a)));
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                let mut db = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, v) in db.data.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*b, db);
            }
            Op::Add(x, y) => {
                acc(*x, g.clone());
                acc(*y, g.clone());
            }
            Op::Sub(x, y) => {
                acc(*x, g.clone());
                acc(*y, g.map(|a| -a));
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                for (o, &xv) in d.data.iter_mut().zip(&val(*x).data) {
                    if xv <= 0.0 {
                        *o = 0.0;
                    }
                }
                acc(*x, d);
            }
            Op::MeanRows(x) => {
                let (m, n) = val(*x).shape();
                let mut d = Tensor::zeros(m, n);
                for r in 0..m {
                    for (o, v) in d.row_mut(r).iter_mut().zip(&g.data) {
                        *o = v / m as f64;
                    }
                }
                acc(*x, d);
            }
            Op::SegmentMean(x, offsets) => {
                let (m, n) = val(*x).shape();
                let mut d = Tensor::zeros(m, n);
                for k in 0..offsets.len() - 1 {
                    let len = (offsets[k + 1] - offsets[k]) as f64;
                    for r in offsets[k]..offsets[k + 1] {
                        for (o, v) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                            *o = v / len;
                        }
                    }
                }
                acc(*x, d);
            }
            Op::Scale(x, c) => acc(*x, g.map(|a| a * c)),
            Op::ScaleBy(x, s) => {
                let c = val(*s).item();
                acc(*x, g.map(|a| a * c));
                let ds = g.data.iter().zip(&val(*x).data).map(|(a, b)| a * b).sum();
                acc(*s, Tensor::scalar(ds));
            }
            Op::Exp(x) => {
                let mut d = g.clone();
                for (o, y) in d.data.iter_mut().zip(&node.value.data) {
                    *o *= y;
                }
                acc(*x, d);
            }
            Op::RowL2Normalize(x, eps) => {
                // Above the floor: dx = (dy - y (y . dy)) / |x|. At or below
                // it the op is a plain scaling by 1 / eps.
                let xs = val(*x);
                let y = &node.value;
                let mut d = Tensor::zeros(xs.rows, xs.cols);
                for r in 0..xs.rows {
                    let n = row_norm(xs.row(r));
                    let (yr, gr) = (y.row(r), g.row(r));
                    if n > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * dot) / n;
                        }
                    } else {
                        for (o, &gv) in d.row_mut(r).iter_mut().zip(gr) {
                            *o = gv / eps;
                        }
                    }
                }
                acc(*x, d);
            }
            Op::LogSumExpRows(x) => {
                let xs = val(*x);
                let mut d = Tensor::zeros(xs.rows, xs.cols);
                for r in 0..xs.rows {
                    let lse = node.value.data[r];
                    let gr = g.data[r];
                    for (o, &v) in d.row_mut(r).iter_mut().zip(xs.row(r)) {
                        *o = gr * libm::exp(v - lse);
                    }
                }
                acc(*x, d);
            }
            Op::GatherRows(table, ids) => {
                let (m, n) = val(*table).shape();
                let mut d = Tensor::zeros(m, n);
                for (k, &i) in ids.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*table, d);
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Diag(x) => {
                let (n, _) = val(*x).shape();
                let mut d = Tensor::zeros(n, n);
                for i in 0..n {
                    d.data[i * n + i] = g.data[i];
                }
                acc(*x, d);
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut da = Tensor::zeros(ta.rows, ta.cols);
                let mut db = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..ta.rows {
                    let gr = g.data[r];
                    for c in 0..ta.cols {
                        da.data[r * ta.cols + c] = gr * tb.get(r, c);
                        db.data[r * ta.cols + c] = gr * ta.get(r, c);
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Softplus(x) => {
                let mut d = g.clone();
                for (o, &xv) in d.data.iter_mut().zip(&val(*x).data) {
                    *o *= sigmoid(xv);
                }
                acc(*x, d);
            }
            Op::Sum(x) => {
                let (m, n) = val(*x).shape();
                acc(*x, Tensor::from_vec(m, n, vec![g.item(); m * n]).unwrap());
            }
            Op::Mean(x) => {
                let (m, n) = val(*x).shape();
                let v = g.item() / (m * n) as f64;
                acc(*x, Tensor::from_vec(m, n, vec![v; m * n]).unwrap());
            }
        }
    }
}

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares the tape's gradient with central differences.
///
/// `build` records the scalar objective on a fresh tape given the node ids
/// of `params` (in order). Up to `n_coords` coordinates across all
/// trainable parameters are drawn with `seed`; every coordinate is checked
/// when there are fewer. The relative error of a coordinate is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(params: &[Parameter], mut build: F, eps: f64, n_coords: usize, seed: u64) -> Result<FdReport>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-7..=1e-2).contains(&eps) {
        return Err(Error::InvalidConfig(format!("finite-difference eps {eps} outside [1e-7, 1e-2]")));
    }
    let analytic = {
        let mut tape = Tape::new();
        let ids = tape.params(params)?;
        let loss = build(&mut tape, &ids)?;
        tape.backward(loss)?
    };
    let mut eval = |ps: &[Parameter]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids = tape.params(ps)?;
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).item())
    };

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.requires_grad)
        .flat_map(|(pi, p)| (0..p.tensor.len()).map(move |k| (pi, k)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= n_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = rng_from_seed(seed);
        let mut idx = sample(&mut rng, coords.len(), n_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut work = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for c in chosen {
        let (pi, k) = coords[c];
        let orig = work[pi].tensor.data[k];
        work[pi].tensor.data[k] = orig + eps;
        let plus = eval(&work)?;
        work[pi].tensor.data[k] = orig - eps;
        let minus = eval(&work)?;
        work[pi].tensor.data[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[&params[pi].name].data[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((params[pi].name.clone(), k));
        }
        report.coords_checked += 1;
    }
    Ok(report)
}

use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlopCategory {
    Projection,
    AttentionScores,
    ValueMixing,
    FeedForward,
}

/// Multiply-accumulate counts for the attention stack, by category.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub projection: u64,
    pub attention_scores: u64,
    pub value_mixing: u64,
    pub feed_forward: u64,
}

impl FlopCounter {
    pub fn record(&mut self, category: FlopCategory, macs: u64) {
        let slot = match category {
            FlopCategory::Projection => &mut self.projection,
            FlopCategory::AttentionScores => &mut self.attention_scores,
            FlopCategory::ValueMixing => &mut self.value_mixing,
            FlopCategory::FeedForward => &mut self.feed_forward,
        };
        *slot += macs;
    }

    pub fn total(&self) -> u64 {
        self.projection + self.attention_scores + self.value_mixing + self.feed_forward
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SelectCols {
        x: Var,
        cols: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    LnFloor {
        x: Var,
        floor: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-owner computation tape.
///
/// Nodes are appended in execution order, so the node list is always
/// topologically sorted and backward is a reverse scan.
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    track_params: bool,
    flops: FlopCounter,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            track_params: true,
            flops: FlopCounter::default(),
        }
    }

    /// A graph whose bound parameters do not require gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    pub fn count_flops(&mut self, category: FlopCategory, macs: u64) {
        self.flops.record(category, macs);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Bind a stored parameter as a leaf; repeated binds return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let track = self.track_params;
        let v = self.leaf(store.get(id).clone(), track);
        self.bound.insert(id, v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&id, &v)| (id, v))
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        if !t.is_matrix() {
            return Err(Error::Shape {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    /// `x[m, n] + row[n]`, broadcasting the row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.value(x).cols();
        let r = self.value(row);
        if r.numel() != n {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let rd = r.data().to_vec();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rd[i % n])
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, row]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(x, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise softmax. Masked entries (`false`) come out exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::Shape {
                    op: "softmax_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![mask.len()],
                });
            }
        }
        let out = softmax_raw(t.data(), m, n, mask)?;
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if n < 2 {
            return Err(Error::Contract(format!(
                "layer_norm needs at least 2 features, got {n}"
            )));
        }
        for p in [gain, bias] {
            if self.value(p).numel() != n {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: t.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenate along the last dimension; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        let mut n_total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            n_total += t.cols();
        }
        let mut out = Vec::with_capacity(m * n_total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![m, n_total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Stack token rows; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut m_total = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            m_total += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![m_total, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if len == 0 || start + len > m {
            return Err(Error::Index {
                what: "row slice",
                index: start + len,
                len: m,
            });
        }
        let out = t.data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![len, n], out)?,
            Op::SliceRows { x, start },
            rg,
        ))
    }

    /// Gather the listed columns (in order, repeats allowed).
    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if cols.is_empty() {
            return Err(Error::Contract("select_cols with no columns".into()));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::Index {
                what: "column",
                index: bad,
                len: n,
            });
        }
        let mut out = Vec::with_capacity(m * cols.len());
        for r in 0..m {
            let row = t.row_slice(r);
            out.extend(cols.iter().map(|&c| row[c]));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![m, cols.len()], out)?,
            Op::SelectCols {
                x,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// Gather the listed rows (in order, repeats allowed).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if rows.is_empty() {
            return Err(Error::Contract("select_rows with no rows".into()));
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Index {
                    what: "row",
                    index: r,
                    len: m,
                });
            }
            out.extend_from_slice(t.row_slice(r));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![rows.len(), n], out)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, n) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "vocabulary",
                    index: id,
                    len: vocab,
                });
            }
            out.extend_from_slice(t.row_slice(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), n], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.rg(&[x]);
        self.push(value, Op::LnFloor { x, floor }, rg)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let t = match (node.requires_grad, g) {
                (true, Some(g)) => Some(Tensor::new(node.value.shape().to_vec(), g)?),
                (true, None) if matches!(node.op, Op::Leaf) => {
                    Some(Tensor::zeros(node.value.shape()))
                }
                _ => None,
            };
            out.push(t);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if needs(*a) {
                    // dA = dC · Bᵀ
                    let bd = val(*b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(g, b)| g * b).sum();
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if needs(*b) {
                    // dB = Aᵀ · dC
                    let ad = val(*a).data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let dst = &mut db[p * n..(p + 1) * n];
                            let src = &dy[i * n..(i + 1) * n];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += av * s;
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dy[j * m + i];
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, dy.to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, dy.to_vec());
                }
            }
            Op::AddRow(x, row) => {
                if needs(*x) {
                    accumulate(grads, *x, dy.to_vec());
                }
                if needs(*row) {
                    let n = val(*row).numel();
                    let mut dr = vec![0.0; n];
                    for (i, g) in dy.iter().enumerate() {
                        dr[i % n] += g;
                    }
                    accumulate(grads, *row, dr);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = dy.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    accumulate(grads, *a, d);
                }
                if needs(*b) {
                    let d = dy.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, f) => {
                accumulate(grads, *a, dy.iter().map(|g| g * f).collect());
            }
            Op::Relu(a) => {
                let d = dy
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let yr = y.row_slice(r);
                    let gr = &dy[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let g = val(*gain).data();
                let (m, n) = (val(*x).rows(), val(*x).cols());
                if needs(*x) {
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..n {
                            let d = dy[r * n + c] * g[c];
                            mean_d += d;
                            mean_dx += d * xhat[r * n + c];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for c in 0..n {
                            let d = dy[r * n + c] * g[c];
                            dx[r * n + c] = inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if needs(*gain) {
                    let mut dg = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            dg[c] += dy[r * n + c] * xhat[r * n + c];
                        }
                    }
                    accumulate(grads, *gain, dg);
                }
                if needs(*bias) {
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            db[c] += dy[r * n + c];
                        }
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n_total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(m * n);
                        for r in 0..m {
                            d.extend_from_slice(
                                &dy[r * n_total + offset..r * n_total + offset + n],
                            );
                        }
                        accumulate(grads, p, d);
                    }
                    offset += n;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).numel();
                    if needs(p) {
                        accumulate(grads, p, dy[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let n = val(*x).cols();
                let mut d = vec![0.0; val(*x).numel()];
                d[start * n..start * n + dy.len()].copy_from_slice(dy);
                accumulate(grads, *x, d);
            }
            Op::SelectCols { x, cols } => {
                let (m, n) = (val(*x).rows(), val(*x).cols());
                let k = cols.len();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    for (j, &c) in cols.iter().enumerate() {
                        d[r * n + c] += dy[r * k + j];
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::SelectRows { x, rows } => {
                let n = val(*x).cols();
                let mut d = vec![0.0; val(*x).numel()];
                for (j, &r) in rows.iter().enumerate() {
                    for c in 0..n {
                        d[r * n + c] += dy[j * n + c];
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Embedding { table, ids } => {
                let n = val(*table).cols();
                let mut d = vec![0.0; val(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..n {
                        d[id * n + c] += dy[r * n + c];
                    }
                }
                accumulate(grads, *table, d);
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![dy[0]; val(*x).numel()]);
            }
            Op::LnFloor { x, floor } => {
                let d = dy
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, v)| if *v > *floor { g / v } else { 0.0 })
                    .collect();
                accumulate(grads, *x, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_raw(
    x: &[f64],
    m: usize,
    n: usize,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let allowed = |i: usize| mask.is_none_or(|mk| mk[i]);
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let mut max = f64::NEG_INFINITY;
        for c in 0..n {
            if allowed(r * n + c) {
                max = max.max(x[r * n + c]);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::InvalidMask { row: r });
        }
        let mut total = 0.0;
        for c in 0..n {
            if allowed(r * n + c) {
                let e = (x[r * n + c] - max).exp();
                out[r * n + c] = e;
                total += e;
            }
        }
        for c in 0..n {
            out[r * n + c] /= total;
        }
    }
    Ok(out)
}

/// Gradients produced by one backward pass, indexed by var.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter bound on `graph`, keyed by id.
    pub fn params(&self, graph: &Graph) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = graph
            .bound_params()
            .filter_map(|(id, v)| self.get(v).map(|g| (id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

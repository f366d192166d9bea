//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive appends one node to the [`Tape`]. Node inputs always
//! have smaller indices than the node itself, so the tape is a valid
//! topological order and [`Tape::backward`] is a single reverse sweep.
//! The tape is rebuilt for each forward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation selector for [`Tape::pointwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    Relu,
    Tanh,
    Add,
    Mul,
    Scale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Transpose(Var),
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { a: Var, idx: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    visited: usize,
}

fn check_finite(data: &[f64], op: &str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{op} produced non-finite value {} at flat index {i}",
            data[i]
        )));
    }
    Ok(())
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Plain matrix product outside any tape.
pub fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let mut t = t;
        t.zero_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.with_grad(false);
        self.leaf(t)
    }

    /// Records a leaf that always receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let t = t.clone().with_grad(true);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_values(self.value(a), self.value(b))?;
        check_finite(out.data(), "matmul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &str) -> Result<bool> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() == tb.len() && ta.dims2() == tb.dims2() {
            return Ok(false);
        }
        let (_, n) = ta.dims2();
        if tb.dims2() == (1, n) {
            return Ok(true);
        }
        Err(Error::dim(format!(
            "{op}: cannot broadcast {:?} onto {:?}",
            tb.shape(),
            ta.shape()
        )))
    }

    fn binary(&mut self, a: Var, b: Var, mul: bool) -> Result<Var> {
        let name = if mul { "mul" } else { "add" };
        let broadcast = self.broadcast_kind(a, b, name)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let n = ta.cols().max(1);
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { tb[i % n] } else { tb[i] };
                if mul {
                    x * y
                } else {
                    x + y
                }
            })
            .collect();
        check_finite(&data, name)?;
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        let op = if mul {
            Op::Mul { a, b, broadcast }
        } else {
            Op::Add { a, b, broadcast }
        };
        Ok(self.push(out, op, rg))
    }

    /// Elementwise sum; `b` may also be a `1 × n` row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, false)
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, true)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x * s).collect();
        check_finite(&data, "scale")?;
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        check_finite(&data, "relu")?;
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Relu(a), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|x| x.tanh()).collect();
        check_finite(&data, "tanh")?;
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Tanh(a), rg))
    }

    /// Dispatches on [`Pointwise`]. Binary kinds require `b`.
    pub fn pointwise(&mut self, kind: Pointwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || Error::contract(format!("{kind:?} needs a second operand"));
        match kind {
            Pointwise::Relu => self.relu(a),
            Pointwise::Tanh => self.tanh(a),
            Pointwise::Scale(s) => self.scale(a, s),
            Pointwise::Add => self.add(a, b.ok_or_else(need_b)?),
            Pointwise::Mul => self.mul(a, b.ok_or_else(need_b)?),
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        check_finite(ta.data(), "softmax_rows input")?;
        let (m, n) = ta.dims2();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&ta.data()[i * n..(i + 1) * n], &mut data[i * n..(i + 1) * n]);
        }
        check_finite(&data, "softmax_rows")?;
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Per-row normalization to zero mean and unit variance, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.shape(x);
        if d < 2 {
            return Err(Error::dim(format!("layer_norm needs at least 2 columns, got {d}")));
        }
        for (name, v) in [("gain", gain), ("bias", bias)] {
            if self.value(v).len() != d {
                return Err(Error::dim(format!(
                    "layer_norm {name} has shape {:?}, expected [{d}]",
                    self.value(v).shape()
                )));
            }
        }
        let tx = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut data = vec![0.0; m * d];
        for i in 0..m {
            let row = &tx[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                data[i * d + j] = h * g[j] + b[j];
            }
        }
        check_finite(&data, "layer_norm")?;
        let out = Tensor::new(self.value(x).shape(), data)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (m, n) = t.dims2();
        if targets.len() != m {
            return Err(Error::dim(format!(
                "cross_entropy: {m} logit rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= n) {
            return Err(Error::Index(format!(
                "target class {bad} outside vocabulary of {n}"
            )));
        }
        check_finite(t.data(), "cross_entropy input")?;
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &t.data()[i * n..(i + 1) * n];
            softmax_row(row, &mut probs[i * n..(i + 1) * n]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
        }
        loss /= m as f64;
        check_finite(&[loss], "cross_entropy")?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        check_finite(&[s], "sum")?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        let out = Tensor::new(&[n, m], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        if start + len > n {
            return Err(Error::dim(format!(
                "column slice {start}..{} out of {n} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&ta.data()[i * n + start..i * n + start + len]);
        }
        let out = Tensor::new(&[m, len], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols { a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != m) {
            return Err(Error::dim(format!(
                "concat_cols: row count {} differs from {m}",
                self.shape(p).0
            )));
        }
        let n: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).1 != n) {
            return Err(Error::dim(format!(
                "concat_rows: column count {} differs from {n}",
                self.shape(p).1
            )));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let m = data.len() / n.max(1);
        let out = Tensor::new(&[m, n], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows `idx` of `a` (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Index(format!("row {bad} outside table of {m} rows")));
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::new(&[idx.len(), n], data)?;
        let rg = self.rg(a);
        Ok(self.push(
            out,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Back-propagates from the scalar `loss`.
    ///
    /// Afterwards [`Tape::grad`] holds `∂loss/∂v` for every node that
    /// requires a gradient. Multiple uses of one node accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        self.visited = 0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.visited += 1;
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Number of nodes the last [`Tape::backward`] propagated through.
    pub fn last_backward_visits(&self) -> usize {
        self.visited
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Temporarily detach the op so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                if self.rg(*a) {
                    let bv = self.value(*b).data().to_vec();
                    self.acc(*a, |ga| gemm_nt_acc(g, &bv, ga, m, n, k));
                }
                if self.rg(*b) {
                    let av = self.value(*a).data().to_vec();
                    self.acc(*b, |gb| gemm_tn_acc(&av, g, gb, m, k, n));
                }
            }
            Op::Add { a, b, broadcast } => {
                self.acc(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let n = self.shape(*b).1.max(1);
                self.acc(*b, |gb| {
                    if *broadcast {
                        g.iter().enumerate().for_each(|(j, y)| gb[j % n] += y)
                    } else {
                        gb.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    }
                });
            }
            Op::Mul { a, b, broadcast } => {
                let n = self.shape(*b).1.max(1);
                let bv = self.value(*b).data().to_vec();
                let av = self.value(*a).data().to_vec();
                self.acc(*a, |ga| {
                    for (j, x) in ga.iter_mut().enumerate() {
                        let y = if *broadcast { bv[j % n] } else { bv[j] };
                        *x += g[j] * y;
                    }
                });
                self.acc(*b, |gb| {
                    for (j, gv) in g.iter().enumerate() {
                        let k = if *broadcast { j % n } else { j };
                        gb[k] += gv * av[j];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.acc(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
            }
            Op::Relu(a) => {
                let av = self.value(*a).data().to_vec();
                self.acc(*a, |ga| {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(&av) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let out = self.nodes[i].value.data().to_vec();
                self.acc(*a, |ga| {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(&out) {
                        *x += y * (1.0 - o * o);
                    }
                });
            }
            Op::Softmax(a) => {
                let out = self.nodes[i].value.data().to_vec();
                let (m, n) = self.shape(*a);
                self.acc(*a, |ga| {
                    for r in 0..m {
                        let s = r * n..(r + 1) * n;
                        let dot: f64 = g[s.clone()].iter().zip(&out[s.clone()]).map(|(x, y)| x * y).sum();
                        for j in s {
                            ga[j] += out[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, d) = self.shape(*x);
                let gv = self.value(*gain).data().to_vec();
                self.acc(*gain, |gg| {
                    for r in 0..m {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.acc(*bias, |gb| {
                    for r in 0..m {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                });
                self.acc(*x, |gx| {
                    for r in 0..m {
                        let s = r * d;
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[s + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[s + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = g[s + j] * gv[j];
                            gx[s + j] += rstd[r] * (dh - mean_dh - xhat[s + j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, n) = self.shape(*logits);
                let scale = g[0] / m as f64;
                self.acc(*logits, |gl| {
                    for r in 0..m {
                        for j in 0..n {
                            let onehot = if targets[r] == j { 1.0 } else { 0.0 };
                            gl[r * n + j] += scale * (probs[r * n + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.acc(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Transpose(a) => {
                let (m, n) = self.shape(*a);
                self.acc(*a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let (m, n) = self.shape(*a);
                let len = self.nodes[i].value.cols();
                self.acc(*a, |ga| {
                    for r in 0..m {
                        for c in 0..len {
                            ga[r * n + start + c] += g[r * len + c];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = self.nodes[i].value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.acc(p, |gp| {
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(p, |gp| {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, y)| *x += y)
                    });
                    offset += len;
                }
            }
            Op::GatherRows { a, idx } => {
                let n = self.shape(*a).1;
                self.acc(*a, |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..n {
                            ga[src * n + c] += g[r * n + c];
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }

    /// Gradient of the last backward loss with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.value(v).shape(), g.clone()).ok()
    }

    /// Gradient data without the shape wrapper.
    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }
}

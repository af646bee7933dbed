use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::params::Params;
use crate::numerics::tensor::{log_add_exp, Tensor};

/// Boolean matrix used for attention masking, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BoolMat {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMat {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "BoolMat: {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(BoolMat { rows, cols, data })
    }

    pub fn all_true(rows: usize, cols: usize) -> Self {
        BoolMat {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Numerically stable row softmax over allowed entries; disallowed entries
/// are exactly zero. Errors on a fully-masked row (empty attention context).
pub fn masked_softmax(scores: &Tensor, mask: &BoolMat) -> Result<Tensor> {
    if scores.rows() != mask.rows() || scores.cols() != mask.cols() {
        return Err(Error::shape(format!(
            "masked_softmax: scores {:?} vs mask {}x{}",
            scores.shape(),
            mask.rows(),
            mask.cols()
        )));
    }
    let (r, c) = (scores.rows(), scores.cols());
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        let row = scores.row(i);
        let allow = mask.row(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..c {
            if allow[j] && row[j] > max {
                max = row[j];
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::numeric(format!(
                "masked_softmax: row {i} is fully masked"
            )));
        }
        let mut z = 0.0;
        for j in 0..c {
            if allow[j] {
                let e = (row[j] - max).exp();
                out.set(i, j, e);
                z += e;
            }
        }
        for j in 0..c {
            if allow[j] {
                out.set(i, j, out.at(i, j) / z);
            }
        }
    }
    Ok(out)
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let (r, c) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..c {
            out.set(i, j, row[j] - lse);
        }
    }
    out
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: Option<String> },
    Add(Var, Var),
    AddRow(Var, Var),
    // The constant is kept for op provenance; backward is identity.
    AddConst(Var, #[allow(dead_code)] f64),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    MaskedSoftmax(Var, BoolMat),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    ConcatCols(Vec<Var>),
    RowRange(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    Select(Var, usize, usize),
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    LogAddExp(Var, Var),
    ShiftCols { x: Var, k: usize, allowed: Vec<bool> },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Eagerly-evaluated computation tape with reverse-mode differentiation.
/// Nodes are appended in topological order; the backward pass walks them in
/// reverse, so gradient accumulation order is fixed and runs reproduce
/// bit-identically. A graph is confined to one training/decoding session.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { name: None })
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(value, Op::Leaf { name: Some(name.into()) })
    }

    /// Insert every parameter as a tracked leaf. Parameters never used by the
    /// forward pass get zero gradients from [`Graph::gradients`].
    pub fn register_params(&mut self, params: &Params) -> ParamVars {
        let mut map = BTreeMap::new();
        for (name, tensor) in params.iter() {
            let v = self.param(name.clone(), tensor.clone());
            map.insert(name.clone(), v);
        }
        ParamVars { map }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `[r x c] + [1 x c]` broadcast add (bias rows).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add_row_broadcast(self.value(b))?;
        Ok(self.push(value, Op::AddRow(a, b)))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddConst(a, c))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn masked_softmax(&mut self, scores: Var, mask: &BoolMat) -> Result<Var> {
        let value = masked_softmax(self.value(scores), mask)?;
        Ok(self.push(value, Op::MaskedSoftmax(scores, mask.clone())))
    }

    pub fn log_softmax(&mut self, logits: Var) -> Var {
        let value = log_softmax_rows(self.value(logits));
        self.push(value, Op::LogSoftmax(logits))
    }

    /// Row layer norm with learned gain/bias (`[1 x c]` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let value =
            crate::numerics::tensor::layer_norm_rows(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols: empty"));
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p).clone();
            for i in 0..rows {
                for j in 0..t.cols() {
                    value.set(i, off + j, t.at(i, j));
                }
            }
            off += t.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end` (half open).
    pub fn row_range(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.rows() {
            return Err(Error::shape(format!(
                "row_range: {start}..{end} of {} rows",
                t.rows()
            )));
        }
        let mut value = Tensor::zeros(end - start, t.cols());
        for i in start..end {
            for j in 0..t.cols() {
                value.set(i - start, j, t.at(i, j));
            }
        }
        Ok(self.push(value, Op::RowRange(a, start, end)))
    }

    /// `out[i, :] = a[idx[i], :]` (embedding lookup; repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if indices.iter().any(|&i| i >= t.rows()) {
            return Err(Error::shape("gather_rows: index out of range"));
        }
        let mut value = Tensor::zeros(indices.len(), t.cols());
        for (k, &i) in indices.iter().enumerate() {
            for j in 0..t.cols() {
                value.set(k, j, t.at(i, j));
            }
        }
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec())))
    }

    /// `out[:, k] = a[:, idx[k]]` (repeats allowed).
    pub fn gather_cols(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if indices.iter().any(|&j| j >= t.cols()) {
            return Err(Error::shape("gather_cols: index out of range"));
        }
        let mut value = Tensor::zeros(t.rows(), indices.len());
        for i in 0..t.rows() {
            for (k, &j) in indices.iter().enumerate() {
                value.set(i, k, t.at(i, j));
            }
        }
        Ok(self.push(value, Op::GatherCols(a, indices.to_vec())))
    }

    /// `out[i, 0] = a[i, cols[i]]`.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if cols.len() != t.rows() || cols.iter().any(|&j| j >= t.cols()) {
            return Err(Error::shape("pick_per_row: bad column list"));
        }
        let mut value = Tensor::zeros(t.rows(), 1);
        for (i, &j) in cols.iter().enumerate() {
            value.set(i, 0, t.at(i, j));
        }
        Ok(self.push(value, Op::PickPerRow(a, cols.to_vec())))
    }

    pub fn select(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() || c >= t.cols() {
            return Err(Error::shape("select: out of range"));
        }
        let value = Tensor::scalar(t.at(r, c));
        Ok(self.push(value, Op::Select(a, r, c)))
    }

    /// im2col over time: `[T x C] -> [T_out x kernel*C]` with zero padding.
    /// Row `t` packs input rows `t*stride - pad .. t*stride - pad + kernel`.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let value = self.value(x).unfold(kernel, stride, pad)?;
        Ok(self.push(value, Op::Unfold { x, kernel, stride, pad }))
    }

    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), log_add_exp)?;
        Ok(self.push(value, Op::LogAddExp(a, b)))
    }

    /// `out[r, s] = allowed[s] && s >= k ? a[r, s-k] : -inf`. Used by the CTC
    /// forward recursion shifts in log domain.
    pub fn shift_cols(&mut self, a: Var, k: usize, allowed: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if allowed.len() != t.cols() {
            return Err(Error::shape("shift_cols: allowed length mismatch"));
        }
        let mut value = Tensor::full(t.rows(), t.cols(), f64::NEG_INFINITY);
        for r in 0..t.rows() {
            for s in k..t.cols() {
                if allowed[s] {
                    value.set(r, s, t.at(r, s - k));
                }
            }
        }
        Ok(self.push(value, Op::ShiftCols { x: a, k, allowed: allowed.to_vec() }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// registered parameter. Untouched parameters get zero gradients.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::invalid(format!(
                "gradients: loss must be scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { name: Some(name) } = &node.op {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        match &mut grads[v.0] {
            Some(g) => {
                *g = g.add(&delta).expect("gradient shape mismatch");
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.add_grad(grads, *a, g.clone());
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        gb.set(0, c, gb.at(0, c) + g.at(r, c));
                    }
                }
                self.add_grad(grads, *b, gb);
            }
            Op::AddConst(a, _) => self.add_grad(grads, *a, g.clone()),
            Op::Mul(a, b) => {
                let ga = g.zip(self.value(*b), |x, y| x * y).unwrap();
                let gb = g.zip(self.value(*a), |x, y| x * y).unwrap();
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::Scale(a, c) => self.add_grad(grads, *a, g.scale(*c)),
            Op::Matmul(a, b) => {
                let bt = self.value(*b).transpose();
                let at = self.value(*a).transpose();
                self.add_grad(grads, *a, g.matmul(&bt).unwrap());
                self.add_grad(grads, *b, at.matmul(g).unwrap());
            }
            Op::Transpose(a) => self.add_grad(grads, *a, g.transpose()),
            Op::Relu(a) => {
                let ga = g.zip(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }).unwrap();
                self.add_grad(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip(&node.value, |gv, y| gv * y * (1.0 - y)).unwrap();
                self.add_grad(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip(self.value(*a), |gv, x| gv / x).unwrap();
                self.add_grad(grads, *a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let ga = g
                    .zip(self.value(*a), |gv, x| if x > *lo && x < *hi { gv } else { 0.0 })
                    .unwrap();
                self.add_grad(grads, *a, ga);
            }
            Op::MaskedSoftmax(a, mask) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let mut dot = 0.0;
                    for c in 0..y.cols() {
                        if mask.at(r, c) {
                            dot += g.at(r, c) * y.at(r, c);
                        }
                    }
                    for c in 0..y.cols() {
                        if mask.at(r, c) {
                            ga.set(r, c, y.at(r, c) * (g.at(r, c) - dot));
                        }
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gsum: f64 = (0..y.cols()).map(|c| g.at(r, c)).sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, g.at(r, c) - y.at(r, c).exp() * gsum);
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = self.value(*x);
                let tg = self.value(*gain);
                let c = tx.cols();
                let cf = c as f64;
                let mut gx = Tensor::zeros(tx.rows(), c);
                let mut ggain = Tensor::zeros(1, c);
                let mut gbias = Tensor::zeros(1, c);
                for r in 0..tx.rows() {
                    let row = tx.row(r);
                    let mean = row.iter().sum::<f64>() / cf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = (0..c).map(|j| g.at(r, j) * tg.at(0, j)).collect();
                    let m1 = dxhat.iter().sum::<f64>() / cf;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&d, &h)| d * h).sum::<f64>() / cf;
                    for j in 0..c {
                        gx.set(r, j, (dxhat[j] - m1 - xhat[j] * m2) * inv);
                        ggain.set(0, j, ggain.at(0, j) + g.at(r, j) * xhat[j]);
                        gbias.set(0, j, gbias.at(0, j) + g.at(r, j));
                    }
                }
                self.add_grad(grads, *x, gx);
                self.add_grad(grads, *gain, ggain);
                self.add_grad(grads, *bias, gbias);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        for j in 0..w {
                            gp.set(r, j, g.at(r, off + j));
                        }
                    }
                    self.add_grad(grads, p, gp);
                    off += w;
                }
            }
            Op::RowRange(a, start, _end) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows(), t.cols());
                for r in 0..g.rows() {
                    for j in 0..g.cols() {
                        ga.set(start + r, j, g.at(r, j));
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::GatherRows(a, indices) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows(), t.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..t.cols() {
                        ga.set(i, j, ga.at(i, j) + g.at(k, j));
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::GatherCols(a, indices) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for (k, &j) in indices.iter().enumerate() {
                        ga.set(r, j, ga.at(r, j) + g.at(r, k));
                    }
                }
                self.add_grad(grads, *a, ga);
            }
            Op::PickPerRow(a, cols) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows(), t.cols());
                for (r, &j) in cols.iter().enumerate() {
                    ga.set(r, j, ga.at(r, j) + g.at(r, 0));
                }
                self.add_grad(grads, *a, ga);
            }
            Op::Select(a, r, c) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows(), t.cols());
                ga.set(*r, *c, g.scalar_value());
                self.add_grad(grads, *a, ga);
            }
            Op::Unfold { x, kernel, stride, pad } => {
                let t = self.value(*x);
                let c = t.cols();
                let mut gx = Tensor::zeros(t.rows(), c);
                for o in 0..g.rows() {
                    for k in 0..*kernel {
                        let src = o * stride + k;
                        if src < *pad || src - pad >= t.rows() {
                            continue;
                        }
                        let src = src - pad;
                        for j in 0..c {
                            gx.set(src, j, gx.at(src, j) + g.at(o, k * c + j));
                        }
                    }
                }
                self.add_grad(grads, *x, gx);
            }
            Op::LogAddExp(a, b) => {
                let out = &node.value;
                let weight = |p: f64, o: f64| {
                    if o == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (p - o).exp()
                    }
                };
                let ta = self.value(*a);
                let tb = self.value(*b);
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                let mut gb = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    for c in 0..out.cols() {
                        let o = out.at(r, c);
                        ga.set(r, c, g.at(r, c) * weight(ta.at(r, c), o));
                        gb.set(r, c, g.at(r, c) * weight(tb.at(r, c), o));
                    }
                }
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::ShiftCols { x, k, allowed } => {
                let t = self.value(*x);
                let mut gx = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for s in *k..t.cols() {
                        if allowed[s] {
                            gx.set(r, s - k, gx.at(r, s - k) + g.at(r, s));
                        }
                    }
                }
                self.add_grad(grads, *x, gx);
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                let gv = g.scalar_value();
                self.add_grad(grads, *a, Tensor::full(t.rows(), t.cols(), gv));
            }
        }
    }
}

/// Lookup table from parameter name to its leaf [`Var`].
pub struct ParamVars {
    map: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unregistered parameter `{name}`")))
    }
}

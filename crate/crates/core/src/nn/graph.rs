//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the
//! information its backward rule needs. [`Graph::backward`] walks the tape
//! from the end, so nodes are visited in reverse topological order by
//! construction. Gradients flow only into nodes that (transitively) depend
//! on a leaf created with `requires_grad = true`.

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul, matmul_at, matmul_bt, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    MatMulBt { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    AddConst { x: Var },
    Relu { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    Stack { parts: Vec<Var> },
    Reshape { x: Var },
    MaskedSoftmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxCe { logits: Var, probs: Vec<f64>, labels: Vec<usize> },
    MaskedCe { logits: Var, probs: Vec<f64>, labels: Vec<Option<usize>>, count: usize },
    WeightedSum { x: Var, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-channel statistics of one batch-norm training forward pass.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
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

    /// Leaf whose gradient is tracked (parameters, inputs under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    /// `y = x·W + b` with `x: N×D_in`, `W: D_in×D_out`, `b: D_out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d_in) = self.value(x).dims2()?;
        let (w_in, d_out) = self.value(w).dims2()?;
        if w_in != d_in {
            return Err(shape_err(format!("affine: input has {d_in} features, weight expects {w_in}")));
        }
        if self.value(b).len() != d_out {
            return Err(shape_err(format!(
                "affine: bias has {} entries, expected {d_out}",
                self.value(b).len()
            )));
        }
        let mut out = matmul(self.value(x).values(), self.value(w).values(), n, d_in, d_out);
        let bias = self.value(b).values();
        for row in out.chunks_mut(d_out) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(vec![n, d_out], out), Op::Affine { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err(format!("matmul: {m}×{k} by {k2}×{n}")));
        }
        let out = matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err(format!("matmul_bt: {m}×{k} by ({n}×{k2})ᵀ")));
        }
        let out = matmul_bt(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt { a, b }, rg))
    }

    // ------------------------------------------------------------------
    // Elementwise and structural
    // ------------------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> =
            self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = t.values().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Scale { x, factor }, rg)
    }

    /// Adds a constant tensor of the same shape (e.g. positional encodings).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(shape_err(format!("add_const: {:?} vs {:?}", self.value(x).shape(), c.shape())));
        }
        let out = self.value(x).values().iter().zip(c.values()).map(|(a, b)| a + b).collect();
        let shape = c.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddConst { x }, rg))
    }

    /// `max(0, x)`; the derivative at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.values().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Relu { x }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if width == 0 || start + width > cols {
            return Err(shape_err(format!(
                "slice_cols: [{start}, {}) outside {cols} columns",
                start + width
            )));
        }
        let src = self.value(x).values();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + width]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![rows, width], out), Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols: no inputs"));
        }
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(shape_err(format!("concat_cols: {r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("stack: no inputs"));
        }
        let inner = self.value(parts[0]).shape().to_vec();
        let mut out = Vec::with_capacity(parts.len() * self.value(parts[0]).len());
        for &p in parts {
            if self.value(p).shape() != inner.as_slice() {
                return Err(shape_err(format!("stack: {:?} vs {inner:?}", self.value(p).shape())));
            }
            out.extend_from_slice(self.value(p).values());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Stack { parts: parts.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Row-wise softmax. Columns flagged in `masked_cols` receive exactly
    /// zero probability in every row.
    pub fn masked_softmax(&mut self, x: Var, masked_cols: Option<&[bool]>) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if let Some(mask) = masked_cols {
            if mask.len() != cols {
                return Err(shape_err(format!(
                    "masked_softmax: mask length {} vs {cols} columns",
                    mask.len()
                )));
            }
            if mask.iter().all(|&m| m) {
                return Err(Error::Input("masked_softmax: every column masked".into()));
            }
        }
        let keep = |c: usize| masked_cols.is_none_or(|m| !m[c]);
        let src = self.value(x).values();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let max = (0..cols).filter(|&c| keep(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for c in 0..cols {
                if keep(c) {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    total += e;
                }
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= total;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::MaskedSoftmax { x }, rg))
    }

    /// Row-wise layer normalization with per-feature scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(shape_err("layer_norm: scale/shift width mismatch"));
        }
        let src = self.value(x).values();
        let g = self.value(gamma).values();
        let bt = self.value(beta).values();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + bt[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            rg,
        ))
    }

    /// Multiplies elementwise by a precomputed mask (0 or `1/(1-p)` entries).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(shape_err("dropout: mask length mismatch"));
        }
        let t = self.value(x);
        let out = t.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dropout { x, mask }, rg))
    }

    // ------------------------------------------------------------------
    // Convolutional stages
    // ------------------------------------------------------------------

    /// 3×3 convolution, stride 1, zero padding 1.
    /// `x: N×C_in×H×W`, `w: C_out×C_in×3×3`, `b: C_out`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, c_in, h, wd) = self.value(x).dims4()?;
        let (c_out, w_in, kh, kw) = self.value(w).dims4()?;
        if w_in != c_in || kh != 3 || kw != 3 {
            return Err(shape_err(format!(
                "conv2d: weight {:?} incompatible with input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )));
        }
        if self.value(b).len() != c_out {
            return Err(shape_err("conv2d: bias length mismatch"));
        }
        let xs = self.value(x).values();
        let ws = self.value(w).values();
        let bs = self.value(b).values();
        let plane = h * wd;
        let mut out = vec![0.0; n * c_out * plane];
        for ni in 0..n {
            for co in 0..c_out {
                let o = &mut out[(ni * c_out + co) * plane..(ni * c_out + co + 1) * plane];
                o.iter_mut().for_each(|v| *v = bs[co]);
                for ci in 0..c_in {
                    let xp = &xs[(ni * c_in + ci) * plane..(ni * c_in + ci + 1) * plane];
                    let kbase = (co * c_in + ci) * 9;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = ws[kbase + ky * 3 + kx];
                            conv_accumulate(o, xp, h, wd, ky, kx, wv);
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(vec![n, c_out, h, wd], out), Op::Conv2d { x, w, b }, rg))
    }

    /// Max pooling over `pool×pool` windows with the given stride.
    pub fn max_pool(&mut self, x: Var, pool: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if pool == 0 || stride == 0 || h < pool || w < pool {
            return Err(shape_err(format!("max_pool: window {pool} stride {stride} on {h}×{w}")));
        }
        let oh = (h - pool) / stride + 1;
        let ow = (w - pool) / stride + 1;
        let xs = self.value(x).values();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..pool {
                        for dx in 0..pool {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![n, c, oh, ow], out), Op::MaxPool { x, argmax }, rg))
    }

    /// Batch normalization over `(N, H, W)` per channel using batch statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchMoments)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err("batch_norm: scale/shift width mismatch"));
        }
        let plane = h * w;
        let count = n * plane;
        let xs = self.value(x).values();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                s += xs[(ni * c + ci) * plane..(ni * c + ci + 1) * plane].iter().sum::<f64>();
            }
            let m = s / count as f64;
            let mut v = 0.0;
            for ni in 0..n {
                v += xs[(ni * c + ci) * plane..(ni * c + ci + 1) * plane]
                    .iter()
                    .map(|x| (x - m).powi(2))
                    .sum::<f64>();
            }
            mean[ci] = m;
            var[ci] = v / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.bn_apply(x, gamma, beta, &mean, &inv_std);
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(vec![n, c, h, w], out),
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std },
            rg,
        );
        Ok((v, BatchMoments { mean, var, count }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).len() != c || mean.len() != c || var.len() != c {
            return Err(shape_err("batch_norm: statistics width mismatch"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.bn_apply(x, gamma, beta, mean, &inv_std);
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(vec![n, c, h, w], out),
            Op::BatchNormEval { x, gamma, beta, xhat, inv_std },
            rg,
        ))
    }

    fn bn_apply(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, c, h, w) = self.value(x).dims4().expect("checked by caller");
        let plane = h * w;
        let xs = self.value(x).values();
        let g = self.value(gamma).values();
        let bt = self.value(beta).values();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (p, (chunk, (xh, o))) in
            xs.chunks(plane).zip(xhat.chunks_mut(plane).zip(out.chunks_mut(plane))).enumerate()
        {
            let ci = p % c;
            for ((v, hv), ov) in chunk.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                *hv = (v - mean[ci]) * inv_std[ci];
                *ov = *hv * g[ci] + bt[ci];
            }
        }
        (xhat, out)
    }

    // ------------------------------------------------------------------
    // Losses and reductions
    // ------------------------------------------------------------------

    /// Sum over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, classes) = self.value(logits).dims2()?;
        if labels.len() != rows {
            return Err(shape_err(format!("softmax_cross_entropy: {} labels for {rows} rows", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        let probs = softmax_rows(self.value(logits).values(), classes);
        let loss: f64 = labels.iter().enumerate().map(|(r, &l)| nll(self.value(logits).row(r), l)).sum();
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, probs, labels: labels.to_vec() }, rg))
    }

    /// Mean of per-position cross entropy over positions whose label differs
    /// from `ignore_index`. `logits` may have any rank ≥ 2; the last axis
    /// holds classes and leading axes are flattened into positions.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        ignore_index: usize,
    ) -> Result<Var> {
        let shape = self.value(logits).shape();
        if shape.len() < 2 {
            return Err(shape_err("masked_cross_entropy: logits need rank ≥ 2"));
        }
        let classes = *shape.last().unwrap();
        let rows = self.value(logits).len() / classes;
        if labels.len() != rows {
            return Err(shape_err(format!(
                "masked_cross_entropy: {} labels for {rows} positions",
                labels.len()
            )));
        }
        let mut kept = Vec::with_capacity(rows);
        for &l in labels {
            if l == ignore_index {
                kept.push(None);
            } else if l >= classes {
                return Err(Error::Label { label: l, classes });
            } else {
                kept.push(Some(l));
            }
        }
        let count = kept.iter().filter(|l| l.is_some()).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let values = self.value(logits).values();
        let probs = softmax_rows(values, classes);
        let total: f64 = kept
            .iter()
            .enumerate()
            .filter_map(|(r, l)| l.map(|l| nll(&values[r * classes..(r + 1) * classes], l)))
            .sum();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::MaskedCe { logits, probs, labels: kept, count },
            rg,
        ))
    }

    /// `Σ x_i · w_i` with constant weights; reduces any output to a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum: weight length mismatch"));
        }
        let s = self.value(x).values().iter().zip(weights.values()).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights: weights.values().to_vec() }, rg))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse pass from a scalar output. Gradients are retained for leaves.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::from_parts(self.value(output).shape().to_vec(), vec![1.0]));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gv = g.values();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, d_in) = self.value(*x).dims2().unwrap();
                let d_out = node.value.shape()[1];
                if self.needs(*x) {
                    let dx = matmul_bt(gv, self.value(*w).values(), n, d_out, d_in);
                    self.accumulate(grads, *x, Tensor::from_parts(vec![n, d_in], dx));
                }
                if self.needs(*w) {
                    let dw = matmul_at(self.value(*x).values(), gv, n, d_in, d_out);
                    self.accumulate(grads, *w, Tensor::from_parts(vec![d_in, d_out], dw));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; d_out];
                    for row in gv.chunks(d_out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::from_parts(shape, db));
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = node.value.shape()[1];
                if self.needs(*a) {
                    let da = matmul_bt(gv, self.value(*b).values(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.needs(*b) {
                    let db = matmul_at(self.value(*a).values(), gv, m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::MatMulBt { a, b } => {
                // out = a·bᵀ, a: m×k, b: n×k
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().0;
                if self.needs(*a) {
                    let da = matmul(gv, self.value(*b).values(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.needs(*b) {
                    let db = matmul_at(gv, self.value(*a).values(), m, n, k);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![n, k], db));
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale { x, factor } => {
                let d = gv.iter().map(|v| v * factor).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::AddConst { x } | Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::from_parts(shape, gv.to_vec()));
            }
            Op::Relu { x } => {
                let d = self
                    .value(*x)
                    .values()
                    .iter()
                    .zip(gv)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).dims2().unwrap();
                let width = node.value.shape()[1];
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + width]
                        .copy_from_slice(&gv[r * width..(r + 1) * width]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![rows, cols], d));
            }
            Op::ConcatCols { parts } => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gv[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::from_parts(vec![rows, w], d));
                    }
                    offset += w;
                }
            }
            Op::Stack { parts } => {
                let each = self.value(parts[0]).len();
                for (i, &p) in parts.iter().enumerate() {
                    let shape = self.value(p).shape().to_vec();
                    let d = gv[i * each..(i + 1) * each].to_vec();
                    self.accumulate(grads, p, Tensor::from_parts(shape, d));
                }
            }
            Op::MaskedSoftmax { x } => {
                let (rows, cols) = node.value.dims2().unwrap();
                let p = node.value.values();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let pr = &p[r * cols..(r + 1) * cols];
                    let gr = &gv[r * cols..(r + 1) * cols];
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = pr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![rows, cols], d));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (rows, cols) = node.value.dims2().unwrap();
                let gm = self.value(*gamma).values();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let gr = &gv[r * cols..(r + 1) * cols];
                    let hr = &xhat[r * cols..(r + 1) * cols];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..cols {
                        dgamma[c] += gr[c] * hr[c];
                        dbeta[c] += gr[c];
                        let dh = gr[c] * gm[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                    }
                    let scale = inv_std[r] / cols as f64;
                    for c in 0..cols {
                        let dh = gr[c] * gm[c];
                        dx[r * cols + c] = scale * (cols as f64 * dh - sum_dh - hr[c] * sum_dh_h);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![rows, cols], dx));
                let gs = self.value(*gamma).shape().to_vec();
                self.accumulate(grads, *gamma, Tensor::from_parts(gs.clone(), dgamma));
                self.accumulate(grads, *beta, Tensor::from_parts(gs, dbeta));
            }
            Op::Dropout { x, mask } => {
                let d = gv.iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Conv2d { x, w, b } => {
                let (n, c_in, h, wd) = self.value(*x).dims4().unwrap();
                let c_out = self.value(*w).shape()[0];
                let plane = h * wd;
                let xs = self.value(*x).values();
                let ws = self.value(*w).values();
                if self.needs(*b) {
                    let mut db = vec![0.0; c_out];
                    for ni in 0..n {
                        for (co, d) in db.iter_mut().enumerate() {
                            *d += gv[(ni * c_out + co) * plane..(ni * c_out + co + 1) * plane]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![c_out], db));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; c_out * c_in * 9];
                    for ni in 0..n {
                        for co in 0..c_out {
                            let gp = &gv[(ni * c_out + co) * plane..(ni * c_out + co + 1) * plane];
                            for ci in 0..c_in {
                                let xp = &xs[(ni * c_in + ci) * plane..(ni * c_in + ci + 1) * plane];
                                let kbase = (co * c_in + ci) * 9;
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        dw[kbase + ky * 3 + kx] += conv_correlate(gp, xp, h, wd, ky, kx);
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::from_parts(vec![c_out, c_in, 3, 3], dw));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * c_in * plane];
                    for ni in 0..n {
                        for co in 0..c_out {
                            let gp = &gv[(ni * c_out + co) * plane..(ni * c_out + co + 1) * plane];
                            for ci in 0..c_in {
                                let dxp = &mut dx[(ni * c_in + ci) * plane..(ni * c_in + ci + 1) * plane];
                                let kbase = (co * c_in + ci) * 9;
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        conv_scatter(dxp, gp, h, wd, ky, kx, ws[kbase + ky * 3 + kx]);
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(vec![n, c_in, h, wd], dx));
                }
            }
            Op::MaxPool { x, argmax } => {
                let shape = self.value(*x).shape().to_vec();
                let mut d = vec![0.0; self.value(*x).len()];
                for (gval, &idx) in gv.iter().zip(argmax) {
                    d[idx] += gval;
                }
                self.accumulate(grads, *x, Tensor::from_parts(shape, d));
            }
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
                let (n, c, h, w) = node.value.dims4().unwrap();
                let plane = h * w;
                let m = (n * plane) as f64;
                let gm = self.value(*gamma).values();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (p, (gp, hp)) in gv.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                    let ci = p % c;
                    for (a, b) in gp.iter().zip(hp) {
                        dgamma[ci] += a * b;
                        dbeta[ci] += a;
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; gv.len()];
                    for (p, ((gp, hp), dp)) in
                        gv.chunks(plane).zip(xhat.chunks(plane)).zip(dx.chunks_mut(plane)).enumerate()
                    {
                        let ci = p % c;
                        let k = gm[ci] * inv_std[ci] / m;
                        for ((a, b), d) in gp.iter().zip(hp).zip(dp.iter_mut()) {
                            *d = k * (m * a - dbeta[ci] - b * dgamma[ci]);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(vec![n, c, h, w], dx));
                }
                let gs = self.value(*gamma).shape().to_vec();
                self.accumulate(grads, *gamma, Tensor::from_parts(gs.clone(), dgamma));
                self.accumulate(grads, *beta, Tensor::from_parts(gs, dbeta));
            }
            Op::BatchNormEval { x, gamma, beta, xhat, inv_std } => {
                let (n, c, h, w) = node.value.dims4().unwrap();
                let plane = h * w;
                let gm = self.value(*gamma).values();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; gv.len()];
                for (p, ((gp, hp), dp)) in
                    gv.chunks(plane).zip(xhat.chunks(plane)).zip(dx.chunks_mut(plane)).enumerate()
                {
                    let ci = p % c;
                    for ((a, b), d) in gp.iter().zip(hp).zip(dp.iter_mut()) {
                        dgamma[ci] += a * b;
                        dbeta[ci] += a;
                        *d = a * gm[ci] * inv_std[ci];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![n, c, h, w], dx));
                let gs = self.value(*gamma).shape().to_vec();
                self.accumulate(grads, *gamma, Tensor::from_parts(gs.clone(), dgamma));
                self.accumulate(grads, *beta, Tensor::from_parts(gs, dbeta));
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let shape = self.value(*logits).shape().to_vec();
                let classes = shape[1];
                let mut d: Vec<f64> = probs.iter().map(|p| p * gv[0]).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * classes + l] -= gv[0];
                }
                self.accumulate(grads, *logits, Tensor::from_parts(shape, d));
            }
            Op::MaskedCe { logits, probs, labels, count } => {
                let shape = self.value(*logits).shape().to_vec();
                let classes = *shape.last().unwrap();
                let scale = gv[0] / *count as f64;
                let mut d = vec![0.0; probs.len()];
                for (r, l) in labels.iter().enumerate() {
                    if let Some(l) = *l {
                        for c in 0..classes {
                            d[r * classes + c] = probs[r * classes + c] * scale;
                        }
                        d[r * classes + l] -= scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_parts(shape, d));
            }
            Op::WeightedSum { x, weights } => {
                let shape = self.value(*x).shape().to_vec();
                let d = weights.iter().map(|w| w * gv[0]).collect();
                self.accumulate(grads, *x, Tensor::from_parts(shape, d));
            }
        }
    }
}

/// Row-wise stabilized softmax of a flat `rows×classes` buffer.
pub(crate) fn softmax_rows(values: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (row, o) in values.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (v, ov) in row.iter().zip(o.iter_mut()) {
            *ov = (v - max).exp();
            total += *ov;
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// `-log softmax(row)[label]` via log-sum-exp.
fn nll(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

/// Output-aligned valid range for kernel offset `k` (0..3) with padding 1.
#[inline]
fn span(k: usize, len: usize) -> (usize, usize) {
    // output index o reads input o + k - 1
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len - 1 } else { len };
    (lo, hi)
}

#[inline]
fn conv_accumulate(out: &mut [f64], x: &[f64], h: usize, w: usize, ky: usize, kx: usize, wv: f64) {
    if wv == 0.0 {
        return;
    }
    let (y0, y1) = span(ky, h);
    let (x0, x1) = span(kx, w);
    for oy in y0..y1 {
        let iy = oy + ky - 1;
        let o = &mut out[oy * w + x0..oy * w + x1];
        let i = &x[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        for (ov, iv) in o.iter_mut().zip(i) {
            *ov += wv * iv;
        }
    }
}

#[inline]
fn conv_correlate(g: &[f64], x: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let (y0, y1) = span(ky, h);
    let (x0, x1) = span(kx, w);
    let mut s = 0.0;
    for oy in y0..y1 {
        let iy = oy + ky - 1;
        let gr = &g[oy * w + x0..oy * w + x1];
        let xr = &x[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        s += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

#[inline]
fn conv_scatter(dx: &mut [f64], g: &[f64], h: usize, w: usize, ky: usize, kx: usize, wv: f64) {
    if wv == 0.0 {
        return;
    }
    let (y0, y1) = span(ky, h);
    let (x0, x1) = span(kx, w);
    for oy in y0..y1 {
        let iy = oy + ky - 1;
        let gr = &g[oy * w + x0..oy * w + x1];
        let dr = &mut dx[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
        for (d, gv) in dr.iter_mut().zip(gr) {
            *d += wv * gv;
        }
    }
}

//! Composite layers built from [`Graph`] primitives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{BatchMoments, Graph, Var};
use crate::nn::params::ParamVars;
use crate::nn::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Weight/bias handles for one layer.
pub type Pair = (Var, Var);

pub fn affine(g: &mut Graph, x: Var, p: Pair) -> Result<Var> {
    g.affine(x, p.0, p.1)
}

pub fn affine_relu(g: &mut Graph, x: Var, p: Pair) -> Result<Var> {
    let y = g.affine(x, p.0, p.1)?;
    Ok(g.relu(y))
}

// ---------------------------------------------------------------------------
// Convolutional block
// ---------------------------------------------------------------------------

/// Running mean and (unbiased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Folds one batch into the running estimate. The first batch seeds it.
    pub fn update(slot: &mut Option<RunningStats>, batch: &BatchMoments) {
        let unbias = if batch.count > 1 { batch.count as f64 / (batch.count - 1) as f64 } else { 1.0 };
        let var: Vec<f64> = batch.var.iter().map(|v| v * unbias).collect();
        match slot {
            None => *slot = Some(RunningStats { mean: batch.mean.clone(), var }),
            Some(rs) => {
                let m = BATCH_NORM_MOMENTUM;
                for (r, b) in rs.mean.iter_mut().zip(&batch.mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in rs.var.iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
    }
}

/// Conv 3×3 (padding 1) → max-pool → batch norm → ReLU.
///
/// In training mode batch statistics normalize the output and are returned
/// so the caller can fold them into its running statistics. In eval mode
/// `running` must be present.
#[allow(clippy::too_many_arguments)]
pub fn conv_block(
    g: &mut Graph,
    x: Var,
    conv: Pair,
    bn: Pair,
    pool: usize,
    stride: usize,
    running: Option<&RunningStats>,
    training: bool,
    name: &str,
) -> Result<(Var, Option<BatchMoments>)> {
    let c = g.conv2d(x, conv.0, conv.1)?;
    let p = g.max_pool(c, pool, stride)?;
    let (n, moments) = if training {
        let (v, m) = g.batch_norm_train(p, bn.0, bn.1, BATCH_NORM_EPS)?;
        (v, Some(m))
    } else {
        let rs = running.ok_or_else(|| Error::MissingRunningStats(name.to_string()))?;
        (g.batch_norm_eval(p, bn.0, bn.1, &rs.mean, &rs.var, BATCH_NORM_EPS)?, None)
    };
    Ok((g.relu(n), moments))
}

// ---------------------------------------------------------------------------
// Attention and encoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub q: Pair,
    pub k: Pair,
    pub v: Pair,
    pub o: Pair,
}

impl AttentionVars {
    pub fn lookup(vars: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Self {
            q: vars.get(&format!("{prefix}.q"))?,
            k: vars.get(&format!("{prefix}.k"))?,
            v: vars.get(&format!("{prefix}.v"))?,
            o: vars.get(&format!("{prefix}.o"))?,
        })
    }
}

/// Scaled dot-product self-attention over the rows of `x` (`F×d_model`).
/// Keys flagged in `key_padding_mask` receive zero weight from every query.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    p: &AttentionVars,
    heads: usize,
    key_padding_mask: Option<&[bool]>,
) -> Result<Var> {
    let (rows, d_model) = g.value(x).dims2()?;
    if heads == 0 || d_model % heads != 0 {
        return Err(Error::Config(format!("d_model {d_model} is not divisible by {heads} heads")));
    }
    if let Some(m) = key_padding_mask {
        if m.len() != rows {
            return Err(Error::Shape(format!(
                "key padding mask has {} entries for {rows} positions",
                m.len()
            )));
        }
    }
    let dh = d_model / heads;
    let q = affine(g, x, p.q)?;
    let k = affine(g, x, p.k)?;
    let v = affine(g, x, p.v)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let s = g.matmul_bt(qh, kh)?;
        let s = g.scale(s, scale);
        let a = g.masked_softmax(s, key_padding_mask)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    affine(g, cat, p.o)
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub attn: AttentionVars,
    pub ln1: Pair,
    pub ffn1: Pair,
    pub ffn2: Pair,
    pub ln2: Pair,
}

impl EncoderVars {
    pub fn lookup(vars: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Self {
            attn: AttentionVars::lookup(vars, &format!("{prefix}.attn"))?,
            ln1: vars.get(&format!("{prefix}.ln1"))?,
            ffn1: vars.get(&format!("{prefix}.ffn1"))?,
            ffn2: vars.get(&format!("{prefix}.ffn2"))?,
            ln2: vars.get(&format!("{prefix}.ln2"))?,
        })
    }
}

/// Inverted dropout driven by a seeded stream. Inactive unless training
/// with a positive rate.
pub struct Dropout {
    rate: f64,
    training: bool,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, training: bool, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self { rate, training, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn disabled() -> Self {
        Self { rate: 0.0, training: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn is_active(&self) -> bool {
        self.training && self.rate > 0.0
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if !self.is_active() {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let n = g.value(x).len();
        let mask = (0..n).map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep }).collect();
        g.dropout(x, mask)
    }
}

/// Post-norm transformer encoder layer:
/// `y1 = LN(x + Drop(Attn(x)))`, `y = LN(y1 + Drop(FFN(y1)))`.
pub fn encoder_layer(
    g: &mut Graph,
    x: Var,
    p: &EncoderVars,
    heads: usize,
    key_padding_mask: Option<&[bool]>,
    dropout: &mut Dropout,
) -> Result<Var> {
    let a = multi_head_attention(g, x, &p.attn, heads, key_padding_mask)?;
    let a = dropout.apply(g, a)?;
    let r1 = g.add(x, a)?;
    let y1 = g.layer_norm(r1, p.ln1.0, p.ln1.1, LAYER_NORM_EPS)?;
    let f = affine_relu(g, y1, p.ffn1)?;
    let f = affine(g, f, p.ffn2)?;
    let f = dropout.apply(g, f)?;
    let r2 = g.add(y1, f)?;
    g.layer_norm(r2, p.ln2.0, p.ln2.1, LAYER_NORM_EPS)
}

/// Sinusoidal position table of shape `len×d_model`.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut v = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model {
            let pair = (i / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / d_model as f64);
            v[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![len, d_model], v)
}

//! Adam with L2-coupled weight decay, and step learning-rate schedules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParameterSet;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moments for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Keyed by `"layer.weight"` / `"layer.bias"`.
    pub moments: BTreeMap<String, Moments>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let moments = params
            .tensors()
            .map(|(k, t)| (k, Moments { m: Tensor::zeros(t.shape()), v: Tensor::zeros(t.shape()) }))
            .collect();
        Self { moments, step: 0 }
    }
}

/// One Adam update. Weight decay is added to the gradient (`g + wd·w`)
/// before the moment updates.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::Shape("adam_step: gradient layout differs from parameters".into()));
    }
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((key, w), (_, g)) in params.tensors_mut().zip(grads.tensors()) {
        let mom = state
            .moments
            .entry(key)
            .or_insert_with(|| Moments { m: Tensor::zeros(w.shape()), v: Tensor::zeros(w.shape()) });
        if mom.m.shape() != w.shape() {
            return Err(Error::Shape("adam_step: optimizer state shape mismatch".into()));
        }
        let (m, v) = (mom.m.values_mut(), mom.v.values_mut());
        for (((wi, gi), mi), vi) in
            w.values_mut().iter_mut().zip(g.values()).zip(m.iter_mut()).zip(v.iter_mut())
        {
            let gd = gi + cfg.weight_decay * *wi;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gd;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gd * gd;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *wi -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `lr(epoch) = base_lr · decay_factor^{#milestones ≤ epoch}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub milestones: BTreeSet<usize>,
}

impl LrSchedule {
    pub fn new(base_lr: f64, decay_factor: f64, milestones: impl IntoIterator<Item = usize>) -> Result<Self> {
        if base_lr <= 0.0 || !base_lr.is_finite() {
            return Err(Error::Config(format!("base learning rate must be positive, got {base_lr}")));
        }
        if !(decay_factor > 0.0 && decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay factor must lie in (0, 1], got {decay_factor}")));
        }
        Ok(Self { base_lr, decay_factor, milestones: milestones.into_iter().collect() })
    }

    /// Decays by `decay_factor` every `period` epochs up to `epochs`.
    pub fn every(base_lr: f64, decay_factor: f64, period: usize, epochs: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config("decay period must be positive".into()));
        }
        Self::new(base_lr, decay_factor, (1..).map(|k| k * period).take_while(|&m| m < epochs))
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let passed = self.milestones.range(..=epoch).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }

    /// Shot-angle CNN: 1e-3, decayed 90% every six epochs.
    pub fn sacnn_full() -> Self {
        Self::every(1e-3, 0.1, 6, 20).expect("valid constants")
    }

    /// Direction transformer: 1e-5, decayed 90% from the seventieth epoch on.
    pub fn direction_full() -> Self {
        Self::new(1e-5, 0.1, [70]).expect("valid constants")
    }
}

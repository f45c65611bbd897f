//! Shot-angle classification: frame preprocessing and the SA-CNN.
//!
//! The network is `L` convolutional blocks (3×3 conv → max-pool → batch
//! norm → ReLU), then a hidden fully connected layer with ReLU and a linear
//! layer producing one logit per class (0 = Other, 1 = High).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::RgbFrame;
use crate::nn::checkpoint::{Checkpoint, EpochRecord, CHECKPOINT_SCHEMA_VERSION};
use crate::nn::graph::{BatchMoments, Graph, Var};
use crate::nn::layers::{affine, affine_relu, conv_block, RunningStats};
use crate::nn::optim::{adam_step, AdamConfig, AdamState, LrSchedule};
use crate::nn::params::{init_norm, init_uniform, ParamVars, ParameterSet};
use crate::nn::tensor::Tensor;
use crate::rally::{AngleStream, ShotAngleToken};

pub const SACNN_KIND: &str = "sacnn";
pub const IMAGENET_MEANS: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STDS: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resize_h: usize,
    pub resize_w: usize,
    pub crop: usize,
    pub channel_means: [f64; 3],
    pub channel_stds: [f64; 3],
}

impl PreprocessConfig {
    /// 216×384 resize, 216×216 center crop.
    pub fn full() -> Self {
        Self {
            resize_h: 216,
            resize_w: 384,
            crop: 216,
            channel_means: IMAGENET_MEANS,
            channel_stds: IMAGENET_STDS,
        }
    }

    /// 32×56 resize, 32×32 center crop.
    pub fn desk() -> Self {
        Self { resize_h: 32, resize_w: 56, crop: 32, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize_h.min(self.resize_w) {
            return Err(Error::Config(format!(
                "crop {} must be positive and fit inside {}×{}",
                self.crop, self.resize_h, self.resize_w
            )));
        }
        if self.channel_stds.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Config("channel stds must be positive".into()));
        }
        Ok(())
    }
}

/// Source coordinate and blend weight for each output position of a
/// half-pixel-centered bilinear resize.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize to `resize_h×resize_w`, center crop to `crop×crop`, then
/// per-channel z-scoring. Output shape `3×crop×crop`.
pub fn preprocess(frame: &RgbFrame, cfg: &PreprocessConfig) -> Result<Tensor> {
    cfg.validate()?;
    if frame.height() < 2 || frame.width() < 2 {
        return Err(Error::Input(format!("frame {}×{} is smaller than 2×2", frame.height(), frame.width())));
    }
    let top = (cfg.resize_h - cfg.crop) / 2;
    let left = (cfg.resize_w - cfg.crop) / 2;
    let rows = &bilinear_taps(frame.height(), cfg.resize_h)[top..top + cfg.crop];
    let cols = &bilinear_taps(frame.width(), cfg.resize_w)[left..left + cfg.crop];
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(3 * cfg.crop * cfg.crop);
    for c in 0..3 {
        for &(y0, y1, ty) in rows {
            for &(x0, x1, tx) in cols {
                let upper = lerp(frame.get(c, y0, x0), frame.get(c, y0, x1), tx);
                let lower = lerp(frame.get(c, y1, x0), frame.get(c, y1, x1), tx);
                let v = lerp(upper, lower, ty);
                out.push((v - cfg.channel_means[c]) / cfg.channel_stds[c]);
            }
        }
    }
    Tensor::new(vec![3, cfg.crop, cfg.crop], out)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaCnnConfig {
    pub preprocess: PreprocessConfig,
    /// Output channels of each convolutional block; its length is `L`.
    pub channels: Vec<usize>,
    pub pool: usize,
    pub stride: usize,
    pub fc_width: usize,
    pub classes: usize,
    /// Apply ReLU to the output logits as well.
    #[serde(default)]
    pub final_relu: bool,
}

impl SaCnnConfig {
    /// Three blocks of 16/32/64 channels on 216×216 inputs, 128-wide hidden layer.
    pub fn full() -> Self {
        Self {
            preprocess: PreprocessConfig::full(),
            channels: vec![16, 32, 64],
            pool: 2,
            stride: 2,
            fc_width: 128,
            classes: 2,
            final_relu: false,
        }
    }

    /// Three narrow blocks on 32×32 inputs.
    pub fn desk() -> Self {
        Self { preprocess: PreprocessConfig::desk(), channels: vec![8, 8, 16], fc_width: 32, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("need at least one block with nonzero channels".into()));
        }
        if self.classes != 2 {
            return Err(Error::Config(format!(
                "shot-angle classification has 2 classes, got {}",
                self.classes
            )));
        }
        if self.pool == 0 || self.stride == 0 || self.fc_width == 0 {
            return Err(Error::Config("pool, stride and fc width must be positive".into()));
        }
        self.feature_side()?;
        Ok(())
    }

    /// Spatial side length after all pooling stages.
    fn feature_side(&self) -> Result<usize> {
        let mut side = self.preprocess.crop;
        for _ in &self.channels {
            if side < self.pool {
                return Err(Error::Config(format!(
                    "input {} too small for {} pooling stages",
                    self.preprocess.crop,
                    self.channels.len()
                )));
            }
            side = (side - self.pool) / self.stride + 1;
        }
        Ok(side)
    }

    pub fn flat_features(&self) -> Result<usize> {
        let side = self.feature_side()?;
        Ok(self.channels.last().copied().unwrap_or(0) * side * side)
    }
}

fn conv_name(i: usize) -> String {
    format!("conv{i}")
}

fn bn_name(i: usize) -> String {
    format!("bn{i}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaCnn {
    pub config: SaCnnConfig,
    pub params: ParameterSet,
    /// Batch-norm running statistics keyed by layer name; empty until trained.
    pub running_stats: BTreeMap<String, RunningStats>,
}

impl SaCnn {
    pub fn new(config: SaCnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let mut c_in = 3;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let (w, b) = init_uniform(&mut rng, &[c_out, c_in, 3, 3], c_out, c_in * 9);
            params.insert(conv_name(i), w, b);
            let (g, bt) = init_norm(c_out);
            params.insert(bn_name(i), g, bt);
            c_in = c_out;
        }
        let flat = config.flat_features()?;
        let (w, b) = init_uniform(&mut rng, &[flat, config.fc_width], config.fc_width, flat);
        params.insert("fc1", w, b);
        let (w, b) =
            init_uniform(&mut rng, &[config.fc_width, config.classes], config.classes, config.fc_width);
        params.insert("fc2", w, b);
        Ok(Self { config, params, running_stats: BTreeMap::new() })
    }

    /// Builds the forward pass for a `N×3×S×S` batch. In training mode the
    /// per-block batch moments are returned in block order.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        x: Var,
        training: bool,
    ) -> Result<(Var, Vec<BatchMoments>)> {
        let (n, c, h, w) = g.value(x).dims4()?;
        let s = self.config.preprocess.crop;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!("SA-CNN expects N×3×{s}×{s}, got {:?}", g.value(x).shape())));
        }
        let mut h = x;
        let mut moments = Vec::new();
        for i in 0..self.config.channels.len() {
            let name = bn_name(i);
            let (y, m) = conv_block(
                g,
                h,
                vars.get(&conv_name(i))?,
                vars.get(&name)?,
                self.config.pool,
                self.config.stride,
                self.running_stats.get(&name),
                training,
                &name,
            )?;
            h = y;
            moments.extend(m);
        }
        let flat = g.reshape(h, &[n, self.config.flat_features()?])?;
        let hidden = affine_relu(g, flat, vars.get("fc1")?)?;
        let mut logits = affine(g, hidden, vars.get("fc2")?)?;
        if self.config.final_relu {
            logits = g.relu(logits);
        }
        Ok((logits, moments))
    }

    /// Eval-mode logits (`N×2`) for a preprocessed batch.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let x = g.constant(batch.clone());
        let (y, _) = self.forward(&mut g, &vars, x, false)?;
        Ok(g.value(y).clone())
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<ShotAngleToken>> {
        let logits = self.logits(batch)?;
        let (n, c) = logits.dims2()?;
        Ok((0..n)
            .map(|r| {
                ShotAngleToken::from_code(argmax_lowest(&logits.values()[r * c..(r + 1) * c]))
                    .unwrap_or(ShotAngleToken::Other)
            })
            .collect())
    }

    pub fn to_checkpoint(
        &self,
        optimizer: Option<AdamState>,
        history: Vec<EpochRecord>,
    ) -> Checkpoint<SaCnnConfig> {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: SACNN_KIND.to_string(),
            config: self.config.clone(),
            params: self.params.clone(),
            running_stats: self.running_stats.clone(),
            optimizer,
            keypoint_stats: None,
            history,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<SaCnnConfig>) -> Result<Self> {
        if ck.kind != SACNN_KIND {
            return Err(Error::Checkpoint(format!("expected `{SACNN_KIND}`, found `{}`", ck.kind)));
        }
        let reference = SaCnn::new(ck.config.clone(), 0)?;
        if !reference.params.same_layout(&ck.params) {
            return Err(Error::Checkpoint("parameter layout does not match config".into()));
        }
        Ok(Self { config: ck.config, params: ck.params, running_stats: ck.running_stats })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stacks `3×S×S` tensors into `N×3×S×S`.
pub fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::EmptyInput("empty image batch".into()))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut v = Vec::with_capacity(images.len() * first.len());
    for t in images {
        if t.shape() != first.shape() {
            return Err(Error::Shape("images in a batch must share one shape".into()));
        }
        v.extend_from_slice(t.values());
    }
    Tensor::new(shape, v)
}

// ---------------------------------------------------------------------------
// Training and inference
// ---------------------------------------------------------------------------

/// Preprocessed images with their shot-angle labels.
#[derive(Debug, Clone, Default)]
pub struct AngleDataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<ShotAngleToken>,
}

impl AngleDataset {
    pub fn from_frames(
        frames: &[RgbFrame],
        labels: &[ShotAngleToken],
        cfg: &PreprocessConfig,
    ) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::Input(format!("{} frames but {} labels", frames.len(), labels.len())));
        }
        Ok(Self {
            inputs: frames.iter().map(|f| preprocess(f, cfg)).collect::<Result<_>>()?,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl AngleTrainConfig {
    /// 20 epochs, batches of 8, Adam with weight decay 0.1, decayed schedule.
    pub fn full(seed: u64) -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            schedule: LrSchedule::sacnn_full(),
            adam: AdamConfig { weight_decay: 0.1, ..AdamConfig::default() },
            seed,
        }
    }

    /// Same optimizer and schedule, 5 epochs.
    pub fn desk(seed: u64) -> Self {
        Self { epochs: 5, ..Self::full(seed) }
    }
}

/// Minimizes the summed cross entropy of each mini-batch with Adam. The
/// sample order is reshuffled every epoch from `cfg.seed`.
pub fn train_sacnn(
    mut model: SaCnn,
    data: &AngleDataset,
    cfg: &AngleTrainConfig,
) -> Result<Checkpoint<SaCnnConfig>> {
    if data.inputs.len() != data.labels.len() {
        return Err(Error::Input("inputs and labels differ in length".into()));
    }
    let highs = data.labels.iter().filter(|&&l| l == ShotAngleToken::High).count();
    if highs == 0 || highs == data.labels.len() {
        return Err(Error::DegenerateData("training set must contain both shot-angle classes".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch norm needs batches of at least 2".into()));
    }
    let mut state = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // A trailing single sample would give degenerate batch statistics.
            if chunk.len() < 2 {
                continue;
            }
            let batch = stack_images(&chunk.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i].code() as usize).collect();
            let mut g = Graph::new();
            let vars = model.params.register(&mut g);
            let x = g.constant(batch);
            let (logits, moments) = model.forward(&mut g, &vars, x, true)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            epoch_loss += g.value(loss).values()[0];
            let mut grads = g.backward(loss)?;
            let grads = vars.gradients(&mut grads, &model.params);
            adam_step(&mut model.params, &grads, &mut state, lr, &cfg.adam)?;
            for (i, m) in moments.iter().enumerate() {
                let mut slot = model.running_stats.remove(&bn_name(i));
                RunningStats::update(&mut slot, m);
                model.running_stats.insert(bn_name(i), slot.expect("just updated"));
            }
        }
        history.push(EpochRecord { epoch, lr, loss: epoch_loss });
    }
    Ok(model.to_checkpoint(Some(state), history))
}

const INFERENCE_BATCH: usize = 64;

/// Classifies preprocessed inputs in fixed-size batches.
pub fn classify_inputs(model: &SaCnn, inputs: &[Tensor]) -> Result<Vec<ShotAngleToken>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(INFERENCE_BATCH) {
        let batch = stack_images(&chunk.iter().collect::<Vec<_>>())?;
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

/// Per-frame shot angles of a video.
pub fn classify_stream(model: &SaCnn, frames: &[RgbFrame], video_id: &str, fps: f64) -> Result<AngleStream> {
    let inputs =
        frames.iter().map(|f| preprocess(f, &model.config.preprocess)).collect::<Result<Vec<_>>>()?;
    AngleStream::new(video_id, fps, classify_inputs(model, &inputs)?)
}

/// Fraction of inputs whose prediction matches the label.
pub fn accuracy(model: &SaCnn, data: &AngleDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyEvaluation("no images to evaluate".into()));
    }
    let pred = classify_inputs(model, &data.inputs)?;
    let correct = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_shape() {
        let f = RgbFrame::constant(1080, 1920, 0.5).unwrap();
        let t = preprocess(&f, &PreprocessConfig::full()).unwrap();
        assert_eq!(t.shape(), &[3, 216, 216]);
        for c in 0..3 {
            let want = (0.5 - IMAGENET_MEANS[c]) / IMAGENET_STDS[c];
            let plane = &t.values()[c * 216 * 216..(c + 1) * 216 * 216];
            assert!(plane.iter().all(|&v| v == want));
        }
    }

    #[test]
    fn identity_resize_crops_center_columns() {
        let (h, w) = (216, 384);
        let mut d = vec![0.0; 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    d[(c * h + y) * w + x] = x as f64 / (w - 1) as f64;
                }
            }
        }
        let cfg =
            PreprocessConfig { channel_means: [0.0; 3], channel_stds: [1.0; 3], ..PreprocessConfig::full() };
        let t = preprocess(&RgbFrame::new(h, w, d).unwrap(), &cfg).unwrap();
        let row = &t.values()[..216];
        assert_eq!(row[0], 84.0 / 383.0);
        assert_eq!(row[215], 299.0 / 383.0);
    }

    #[test]
    fn rejects_tiny_frames() {
        let f = RgbFrame::constant(1, 5, 0.2).unwrap();
        assert!(matches!(preprocess(&f, &PreprocessConfig::desk()), Err(Error::Input(_))));
    }

    #[test]
    fn logits_shape_and_zero_model() {
        let mut m = SaCnn::new(SaCnnConfig::desk(), 3).unwrap();
        let batch = Tensor::full(&[8, 3, 32, 32], 0.1);
        m.running_stats = (0..3)
            .map(|i| {
                let c = m.config.channels[i];
                (bn_name(i), RunningStats { mean: vec![0.0; c], var: vec![1.0; c] })
            })
            .collect();
        assert_eq!(m.logits(&batch).unwrap().shape(), &[8, 2]);
        for (_, t) in m.params.tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let l = m.logits(&batch).unwrap();
        assert!(l.values().iter().all(|&v| v == 0.0));
        assert!(m.predict(&batch).unwrap().iter().all(|&t| t == ShotAngleToken::Other));
    }

    #[test]
    fn eval_without_stats_errors() {
        let m = SaCnn::new(SaCnnConfig::desk(), 3).unwrap();
        assert!(matches!(m.logits(&Tensor::full(&[2, 3, 32, 32], 0.0)), Err(Error::MissingRunningStats(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[1.0, 1.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn full_profile_features() {
        assert_eq!(SaCnnConfig::full().flat_features().unwrap(), 64 * 27 * 27);
        assert_eq!(SaCnnConfig::desk().flat_features().unwrap(), 16 * 4 * 4);
    }
}

//! Player-wise-projection transformer labeling each frame of a rally with a
//! shuttlecock direction.
//!
//! Each frame's two skeletons (34 normalized coordinates each) go through
//! separate two-layer MLP branches whose outputs are concatenated, bottom
//! player first. Sinusoidal position encodings are added, a stack of
//! post-norm encoder layers with key-padding masks follows, and a per-frame
//! linear head produces logits over S, B, U, Pad.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angle::argmax_lowest;
use crate::direction::{DirectionSequence, DirectionToken, KSeqRecord, NUM_DIRECTION_CLASSES, PAD_INDEX};
use crate::error::{Error, Result};
use crate::geometry::{normalize_pair, KeypointStats, PlayerKeypointPair, COORDS_PER_PERSON};
use crate::nn::checkpoint::{Checkpoint, EpochRecord, CHECKPOINT_SCHEMA_VERSION};
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{affine, affine_relu, encoder_layer, positional_encoding, Dropout, EncoderVars};
use crate::nn::optim::{adam_step, AdamConfig, AdamState, LrSchedule};
use crate::nn::params::{init_norm, init_uniform, ParamVars, ParameterSet};
use crate::nn::tensor::Tensor;

pub const DIRECTION_KIND: &str = "direction_transformer";
/// Coordinates per frame: two players × 17 keypoints × (x, y).
pub const FRAME_FEATURES: usize = 2 * COORDS_PER_PERSON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Longest sequence the model accepts (`F`); shorter ones are padded to it.
    pub max_len: usize,
    pub classes: usize,
    pub dropout: f64,
    /// Hidden width of each player's projection branch.
    pub proj_hidden: usize,
}

impl TransformerConfig {
    /// 8 layers, 8 heads, feed-forward width 2048, `F = 600`, `d_model = 512`.
    pub fn full() -> Self {
        Self {
            d_model: 512,
            heads: 8,
            layers: 8,
            d_ff: 2048,
            max_len: 600,
            classes: NUM_DIRECTION_CLASSES,
            dropout: 0.1,
            proj_hidden: 256,
        }
    }

    /// 2 layers, 4 heads, `d_model = 32`, `F = 120`, no dropout.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            layers: 2,
            d_ff: 64,
            max_len: 120,
            classes: NUM_DIRECTION_CLASSES,
            dropout: 0.0,
            proj_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model must be even and positive, got {}", self.d_model)));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.max_len == 0 || self.d_ff == 0 || self.proj_hidden == 0 {
            return Err(Error::Config("max_len, d_ff and proj_hidden must be positive".into()));
        }
        if self.classes != NUM_DIRECTION_CLASSES {
            return Err(Error::Config(format!(
                "direction labeling has {NUM_DIRECTION_CLASSES} classes, got {}",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// What to do with sequences longer than `max_len`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    /// Reject with a length error.
    #[default]
    Strict,
    /// Split into consecutive non-overlapping windows of `max_len`.
    Chunk,
}

/// Initializes parameters for `cfg` from `seed`.
pub fn init_params(cfg: &TransformerConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::new();
    let dense = |p: &mut ParameterSet, rng: &mut ChaCha8Rng, name: String, d_in: usize, d_out: usize| {
        let (w, b) = init_uniform(rng, &[d_in, d_out], d_out, d_in);
        p.insert(name, w, b);
    };
    let half = cfg.d_model / 2;
    for branch in ["bottom", "top"] {
        dense(&mut p, &mut rng, format!("proj.{branch}.fc1"), COORDS_PER_PERSON, cfg.proj_hidden);
        dense(&mut p, &mut rng, format!("proj.{branch}.fc2"), cfg.proj_hidden, half);
    }
    for l in 0..cfg.layers {
        for part in ["q", "k", "v", "o"] {
            dense(&mut p, &mut rng, format!("enc{l}.attn.{part}"), cfg.d_model, cfg.d_model);
        }
        dense(&mut p, &mut rng, format!("enc{l}.ffn1"), cfg.d_model, cfg.d_ff);
        dense(&mut p, &mut rng, format!("enc{l}.ffn2"), cfg.d_ff, cfg.d_model);
        for ln in ["ln1", "ln2"] {
            let (g, b) = init_norm(cfg.d_model);
            p.insert(format!("enc{l}.{ln}"), g, b);
        }
    }
    dense(&mut p, &mut rng, "head".to_string(), cfg.d_model, cfg.classes);
    Ok(p)
}

/// Maps `F×68` frame features to `F×d_model`: each player's 34 coordinates
/// through its own two affine+ReLU stages, then concatenation (bottom first).
pub fn playerwise_projection(g: &mut Graph, vars: &ParamVars, x: Var) -> Result<Var> {
    let (_, width) = g.value(x).dims2()?;
    if width != FRAME_FEATURES {
        return Err(Error::Shape(format!("frame features must be {FRAME_FEATURES} wide, got {width}")));
    }
    let mut halves = Vec::with_capacity(2);
    for (i, branch) in ["bottom", "top"].iter().enumerate() {
        let xi = g.slice_cols(x, i * COORDS_PER_PERSON, COORDS_PER_PERSON)?;
        let h = affine_relu(g, xi, vars.get(&format!("proj.{branch}.fc1"))?)?;
        halves.push(affine_relu(g, h, vars.get(&format!("proj.{branch}.fc2"))?)?);
    }
    g.concat_cols(&halves)
}

/// Logits (`F×C`) for one sequence of frame features. `pad_mask[i]` marks
/// padded frames, which are hidden from attention as keys.
pub fn sequence_forward(
    g: &mut Graph,
    vars: &ParamVars,
    cfg: &TransformerConfig,
    x: Var,
    pad_mask: &[bool],
    dropout: &mut Dropout,
) -> Result<Var> {
    let (len, _) = g.value(x).dims2()?;
    if pad_mask.len() != len {
        return Err(Error::Shape(format!("pad mask has {} entries for {len} frames", pad_mask.len())));
    }
    let h = playerwise_projection(g, vars, x)?;
    let mut h = g.add_const(h, &positional_encoding(len, cfg.d_model))?;
    let mask = pad_mask.iter().any(|&m| m).then_some(pad_mask);
    for l in 0..cfg.layers {
        let p = EncoderVars::lookup(vars, &format!("enc{l}"))?;
        h = encoder_layer(g, h, &p, cfg.heads, mask, dropout)?;
    }
    affine(g, h, vars.get("head")?)
}

/// One rally prepared for the network: padded features, mask and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSequence {
    /// `max_len×68` normalized coordinates; padded rows are zero.
    pub features: Tensor,
    pub pad_mask: Vec<bool>,
    /// Label codes, `PAD_INDEX` on padded frames. Empty when unlabeled.
    pub labels: Vec<usize>,
    /// Number of real frames.
    pub len: usize,
}

impl PaddedSequence {
    pub fn new(
        pairs: &[PlayerKeypointPair],
        labels: Option<&[DirectionToken]>,
        stats: &KeypointStats,
        max_len: usize,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("keypoint sequence is empty".into()));
        }
        if pairs.len() > max_len {
            return Err(Error::Length { len: pairs.len(), max: max_len });
        }
        let mut v = vec![0.0; max_len * FRAME_FEATURES];
        for (i, p) in pairs.iter().enumerate() {
            v[i * FRAME_FEATURES..(i + 1) * FRAME_FEATURES].copy_from_slice(&normalize_pair(p, stats).flat());
        }
        let pad_mask = (0..max_len).map(|i| i >= pairs.len()).collect();
        let labels = match labels {
            None => Vec::new(),
            Some(l) => {
                if l.len() != pairs.len() {
                    return Err(Error::Input(format!("{} labels for {} frames", l.len(), pairs.len())));
                }
                let mut codes: Vec<usize> = l.iter().map(|t| t.code()).collect();
                codes.resize(max_len, PAD_INDEX);
                codes
            }
        };
        Ok(Self {
            features: Tensor::new(vec![max_len, FRAME_FEATURES], v)?,
            pad_mask,
            labels,
            len: pairs.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionModel {
    pub config: TransformerConfig,
    pub params: ParameterSet,
    /// Normalization applied to raw keypoints before the network.
    pub stats: KeypointStats,
}

impl DirectionModel {
    pub fn new(config: TransformerConfig, stats: KeypointStats, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params, stats })
    }

    /// Eval-mode logits for a batch of equally padded sequences, shape `N×F×C`.
    pub fn logits(&self, batch: &[PaddedSequence]) -> Result<Tensor> {
        let f = batch.first().map_or(0, |s| s.pad_mask.len());
        if let Some(s) = batch.iter().find(|s| s.pad_mask.len() != f) {
            return Err(Error::Shape(format!("batch mixes padded lengths {f} and {}", s.pad_mask.len())));
        }
        let c = self.config.classes;
        let mut out = Vec::with_capacity(batch.len() * f * c);
        for s in batch {
            let mut g = Graph::new();
            let vars = self.params.register(&mut g);
            let x = g.constant(s.features.clone());
            let y = sequence_forward(&mut g, &vars, &self.config, x, &s.pad_mask, &mut Dropout::disabled())?;
            out.extend_from_slice(g.value(y).values());
        }
        Tensor::new(vec![batch.len(), f, c], out)
    }

    fn predict_window(&self, pairs: &[PlayerKeypointPair]) -> Result<Vec<DirectionToken>> {
        let seq = PaddedSequence::new(pairs, None, &self.stats, self.config.max_len)?;
        let logits = self.logits(std::slice::from_ref(&seq))?;
        let c = self.config.classes;
        Ok((0..seq.len)
            .map(|i| {
                // Pad is never a valid prediction: argmax over S, B, U only.
                let row = &logits.values()[i * c..i * c + PAD_INDEX];
                DirectionToken::from_code(argmax_lowest(row)).expect("real class")
            })
            .collect())
    }

    /// Direction per frame, never Pad; output length equals input length.
    pub fn predict(&self, pairs: &[PlayerKeypointPair], mode: LengthMode) -> Result<Vec<DirectionToken>> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("keypoint sequence is empty".into()));
        }
        let max = self.config.max_len;
        match mode {
            LengthMode::Strict if pairs.len() > max => Err(Error::Length { len: pairs.len(), max }),
            _ => {
                let mut out = Vec::with_capacity(pairs.len());
                for w in pairs.chunks(max) {
                    out.extend(self.predict_window(w)?);
                }
                Ok(out)
            }
        }
    }

    pub fn to_checkpoint(
        &self,
        optimizer: Option<AdamState>,
        history: Vec<EpochRecord>,
    ) -> Checkpoint<TransformerConfig> {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: DIRECTION_KIND.to_string(),
            config: self.config.clone(),
            params: self.params.clone(),
            running_stats: Default::default(),
            optimizer,
            keypoint_stats: Some(self.stats.clone()),
            history,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<TransformerConfig>) -> Result<Self> {
        if ck.kind != DIRECTION_KIND {
            return Err(Error::Checkpoint(format!("expected `{DIRECTION_KIND}`, found `{}`", ck.kind)));
        }
        let reference = init_params(&ck.config, 0)?;
        if !reference.same_layout(&ck.params) {
            return Err(Error::Checkpoint("parameter layout does not match config".into()));
        }
        let stats =
            ck.keypoint_stats.ok_or_else(|| Error::Checkpoint("missing keypoint statistics".into()))?;
        Ok(Self { config: ck.config, params: ck.params, stats })
    }
}

/// Predicts a rally's direction sequence, keeping its identifiers.
pub fn predict_directions(
    model: &DirectionModel,
    record: &KSeqRecord,
    mode: LengthMode,
) -> Result<DirectionSequence> {
    let tokens = model.predict(&record.pairs(), mode)?;
    Ok(DirectionSequence::new(record.rally_id.clone(), tokens)?
        .with_origin(record.video_id.clone(), record.start_frame))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionTrainConfig {
    pub epochs: usize,
    /// Rallies per optimizer step; the step loss is the mean of their losses.
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default)]
    pub length_mode: LengthMode,
}

impl DirectionTrainConfig {
    /// 100 epochs, one rally per step, lr 1e-5 decayed ×0.1 at epoch 70.
    pub fn full(seed: u64) -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            schedule: LrSchedule::direction_full(),
            adam: AdamConfig::default(),
            seed,
            length_mode: LengthMode::Strict,
        }
    }

    /// 30 epochs, one rally per step, lr 1e-3 decayed ×0.1 at epoch 20.
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 30,
            schedule: LrSchedule::new(1e-3, 0.1, [20]).expect("valid constants"),
            ..Self::full(seed)
        }
    }
}

/// Splits each labeled record into network-ready sequences.
pub fn prepare_records(
    records: &[KSeqRecord],
    stats: &KeypointStats,
    max_len: usize,
    mode: LengthMode,
) -> Result<Vec<PaddedSequence>> {
    let mut out = Vec::new();
    for r in records {
        let pairs = r.pairs();
        let labels = r.labels()?.tokens;
        if pairs.len() > max_len && mode == LengthMode::Strict {
            return Err(Error::Length { len: pairs.len(), max: max_len });
        }
        for (p, l) in pairs.chunks(max_len).zip(labels.chunks(max_len)) {
            out.push(PaddedSequence::new(p, Some(l), stats, max_len)?);
        }
    }
    Ok(out)
}

/// Mean masked cross entropy of one sequence (Pad positions ignored).
pub fn sequence_loss(
    g: &mut Graph,
    vars: &ParamVars,
    cfg: &TransformerConfig,
    seq: &PaddedSequence,
    dropout: &mut Dropout,
) -> Result<Var> {
    let x = g.constant(seq.features.clone());
    let logits = sequence_forward(g, vars, cfg, x, &seq.pad_mask, dropout)?;
    g.masked_cross_entropy(logits, &seq.labels, PAD_INDEX)
}

/// Trains a fresh model on labeled records. Keypoint statistics come from
/// the training pairs and are stored in the checkpoint.
pub fn train_direction_model(
    records: &[KSeqRecord],
    config: &TransformerConfig,
    train: &DirectionTrainConfig,
) -> Result<Checkpoint<TransformerConfig>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no training records".into()));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let stats = KeypointStats::from_pairs(records.iter().flat_map(|r| r.frames.iter().map(|f| &f.pair)))?;
    let mut model = DirectionModel::new(config.clone(), stats, train.seed)?;
    let data = prepare_records(records, &model.stats, config.max_len, train.length_mode)?;
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x005e_ed0f_d1e5);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let lr = train.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let mut g = Graph::new();
            let vars = model.params.register(&mut g);
            let mut dropout = Dropout::new(config.dropout, true, rng.random())?;
            let mut total: Option<Var> = None;
            for &i in chunk {
                let l = sequence_loss(&mut g, &vars, config, &data[i], &mut dropout)?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            let total = total.expect("nonempty chunk");
            let loss = g.scale(total, 1.0 / chunk.len() as f64);
            epoch_loss += g.value(total).values()[0];
            let mut grads = g.backward(loss)?;
            let grads = vars.gradients(&mut grads, &model.params);
            adam_step(&mut model.params, &grads, &mut state, lr, &train.adam)?;
        }
        history.push(EpochRecord { epoch, lr, loss: epoch_loss / data.len() as f64 });
    }
    Ok(model.to_checkpoint(Some(state), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, SkeletonKeypoints};

    fn toy() -> TransformerConfig {
        TransformerConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            d_ff: 16,
            max_len: 6,
            classes: 4,
            dropout: 0.0,
            proj_hidden: 8,
        }
    }

    fn pair(k: f64) -> PlayerKeypointPair {
        let sk = |y: f64| {
            SkeletonKeypoints(std::array::from_fn(|i| Point2::new(k + i as f64, y + i as f64 * 0.5)))
        };
        PlayerKeypointPair { bottom_player: sk(10.0), top_player: sk(-3.0) }
    }

    #[test]
    fn config_validation() {
        let mut c = toy();
        c.d_model = 7;
        assert!(c.validate().is_err());
        c.d_model = 12;
        c.heads = 5;
        assert!(c.validate().is_err());
        assert!(TransformerConfig::full().validate().is_ok());
    }

    #[test]
    fn output_shape_and_never_pad() {
        let m = DirectionModel::new(toy(), KeypointStats::identity(), 1).unwrap();
        let pairs: Vec<_> = (0..4).map(|i| pair(i as f64)).collect();
        let s = PaddedSequence::new(&pairs, None, &m.stats, 6).unwrap();
        assert_eq!(m.logits(&[s.clone(), s]).unwrap().shape(), &[2, 6, 4]);
        let mut m = m;
        // Force the Pad logit to dominate.
        let head = m.params.layers.get_mut("head").unwrap();
        head.bias.values_mut()[3] = 100.0;
        let pred = m.predict(&pairs, LengthMode::Strict).unwrap();
        assert_eq!(pred.len(), 4);
        assert!(pred.iter().all(|&t| t != DirectionToken::Pad));
    }

    #[test]
    fn length_modes() {
        let m = DirectionModel::new(toy(), KeypointStats::identity(), 1).unwrap();
        let pairs: Vec<_> = (0..14).map(|i| pair(i as f64)).collect();
        assert!(matches!(m.predict(&pairs, LengthMode::Strict), Err(Error::Length { len: 14, max: 6 })));
        assert_eq!(m.predict(&pairs, LengthMode::Chunk).unwrap().len(), 14);
    }

    #[test]
    fn projection_branches_are_independent() {
        let p = init_params(&toy(), 9).unwrap();
        let run = |x: Tensor| {
            let mut g = Graph::new();
            let vars = p.register(&mut g);
            let x = g.constant(x);
            let y = playerwise_projection(&mut g, &vars, x).unwrap();
            g.value(y).clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base: Vec<f64> = (0..3 * 68).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut moved = base.clone();
        for r in 0..3 {
            for c in 34..68 {
                moved[r * 68 + c] += 0.7;
            }
        }
        let a = run(Tensor::new(vec![3, 68], base).unwrap());
        let b = run(Tensor::new(vec![3, 68], moved).unwrap());
        for r in 0..3 {
            assert_eq!(&a.row(r)[..4], &b.row(r)[..4]);
            assert_ne!(&a.row(r)[4..], &b.row(r)[4..]);
        }
    }

    #[test]
    fn full_schedules() {
        let d = DirectionTrainConfig::full(0);
        assert_eq!(d.schedule.lr(69), 1e-5);
        assert!((d.schedule.lr(70) - 1e-6).abs() < 1e-21);
        assert_eq!(d.epochs, 100);
        assert_eq!(d.batch_size, 1);
    }
}

//! Confusion metrics, rally-trimming reports, and tolerance-window hit reports.

use serde::{Deserialize, Serialize};

use crate::direction::{DirectionSequence, DirectionToken};
use crate::error::{Error, Result};
use crate::rally::RallySegment;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for BinaryCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `num / den`, with 0/0 defined as 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn binary_metrics(c: &BinaryCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::EmptyEvaluation("all confusion counts are zero".into()));
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

// ---------------------------------------------------------------------------
// Rally trimming
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimmingReport {
    pub correct: u64,
    pub extra: u64,
    pub missed: u64,
    pub total_trimmed: u64,
    pub actual: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TrimmingReport {
    /// Builds the report from match counts. Accuracy has no true negatives:
    /// `correct / (correct + extra + missed)`.
    pub fn from_counts(correct: u64, extra: u64, missed: u64) -> Result<Self> {
        let total_trimmed = correct + extra;
        let actual = correct + missed;
        if total_trimmed == 0 && actual == 0 {
            return Err(Error::EmptyEvaluation("no predicted or actual rallies".into()));
        }
        let precision = ratio(correct, total_trimmed);
        let recall = ratio(correct, actual);
        Ok(Self {
            correct,
            extra,
            missed,
            total_trimmed,
            actual,
            accuracy: ratio(correct, correct + extra + missed),
            precision,
            recall,
            f1: harmonic(precision, recall),
        })
    }
}

/// Intersection-over-union of two inclusive frame intervals.
pub fn interval_iou(a: &RallySegment, b: &RallySegment) -> f64 {
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame.min(b.end_frame);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Greedy one-to-one matching in start order: each predicted segment takes
/// the first still-unmatched actual rally whose IoU with it reaches
/// `iou_threshold`.
pub fn trimming_report(
    predicted: &[RallySegment],
    actual: &[RallySegment],
    iou_threshold: f64,
) -> Result<TrimmingReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Config(format!("IoU threshold must lie in (0, 1], got {iou_threshold}")));
    }
    let mut pred = predicted.to_vec();
    pred.sort();
    for w in pred.windows(2) {
        if w[1].start_frame <= w[0].end_frame {
            return Err(Error::Input(format!("predicted segments {} and {} overlap", w[0], w[1])));
        }
    }
    let mut act = actual.to_vec();
    act.sort();
    let mut taken = vec![false; act.len()];
    let mut correct = 0u64;
    for p in &pred {
        let hit = act.iter().enumerate().find(|(j, a)| !taken[*j] && interval_iou(p, a) >= iou_threshold);
        if let Some((j, _)) = hit {
            taken[j] = true;
            correct += 1;
        }
    }
    TrimmingReport::from_counts(correct, pred.len() as u64 - correct, act.len() as u64 - correct)
}

// ---------------------------------------------------------------------------
// Direction tokens
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMetrics {
    pub token: DirectionToken,
    pub counts: BinaryCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    /// Positions where gold is not Pad.
    pub evaluated: u64,
    /// Fraction of evaluated positions where prediction equals gold.
    pub accuracy: f64,
    /// One-vs-rest results for S, B, U in that order.
    pub per_token: Vec<TokenMetrics>,
}

/// Confusion counts for S, B, U over the positions where gold is not Pad.
pub fn token_counts(
    pred: &[DirectionToken],
    gold: &[DirectionToken],
) -> Result<([BinaryCounts; 3], u64, u64)> {
    if pred.len() != gold.len() {
        return Err(Error::Input(format!("prediction has {} tokens, gold has {}", pred.len(), gold.len())));
    }
    let mut counts = [BinaryCounts::default(); 3];
    let mut evaluated = 0;
    let mut agree = 0;
    for (&p, &g) in pred.iter().zip(gold) {
        if g == DirectionToken::Pad {
            continue;
        }
        evaluated += 1;
        agree += u64::from(p == g);
        for (c, t) in counts.iter_mut().zip(DirectionToken::REAL) {
            match (p == t, g == t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok((counts, evaluated, agree))
}

fn token_report_from_counts(counts: [BinaryCounts; 3], evaluated: u64, agree: u64) -> Result<TokenReport> {
    if evaluated == 0 {
        return Err(Error::EmptyEvaluation("gold contains only Pad".into()));
    }
    let per_token = counts
        .iter()
        .zip(DirectionToken::REAL)
        .map(|(c, token)| Ok(TokenMetrics { token, counts: *c, metrics: binary_metrics(c)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenReport { evaluated, accuracy: ratio(agree, evaluated), per_token })
}

pub fn token_report(pred: &DirectionSequence, gold: &DirectionSequence) -> Result<TokenReport> {
    let (counts, evaluated, agree) = token_counts(&pred.tokens, &gold.tokens)?;
    token_report_from_counts(counts, evaluated, agree)
}

/// Pools counts over many sequence pairs before computing metrics.
pub fn token_report_many<'a>(
    pairs: impl IntoIterator<Item = (&'a DirectionSequence, &'a DirectionSequence)>,
) -> Result<TokenReport> {
    let mut total = [BinaryCounts::default(); 3];
    let (mut evaluated, mut agree) = (0, 0);
    for (p, g) in pairs {
        let (c, e, a) = token_counts(&p.tokens, &g.tokens)?;
        for (t, c) in total.iter_mut().zip(c) {
            *t = *t + c;
        }
        evaluated += e;
        agree += a;
    }
    token_report_from_counts(total, evaluated, agree)
}

// ---------------------------------------------------------------------------
// Hit frames
// ---------------------------------------------------------------------------

/// A prediction `P` matches an actual hit `n` iff `|P - n| < tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub tol: usize,
}

impl ToleranceConfig {
    pub fn new(tol: usize) -> Result<Self> {
        if tol == 0 {
            return Err(Error::Config("tolerance must be at least 1 frame".into()));
        }
        Ok(Self { tol })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    pub tol: usize,
    pub counts: BinaryCounts,
    pub metrics: Metrics,
}

/// Matches predictions in increasing frame order, each to the earliest
/// unmatched actual hit inside its open window. `tn` counts the remaining
/// frames of the video.
pub fn hit_tolerance_counts(
    pred: &[usize],
    actual: &[usize],
    total_frames: usize,
    cfg: ToleranceConfig,
) -> Result<BinaryCounts> {
    for &i in pred.iter().chain(actual) {
        if i >= total_frames {
            return Err(Error::Range { index: i, len: total_frames });
        }
    }
    let mut p = pred.to_vec();
    p.sort_unstable();
    let mut a = actual.to_vec();
    a.sort_unstable();
    let mut taken = vec![false; a.len()];
    // Actual hits left of `lo` are too early for every remaining prediction.
    let mut lo = 0;
    let mut tp = 0u64;
    for &x in &p {
        while lo < a.len() && a[lo] + cfg.tol <= x {
            lo += 1;
        }
        let found = (lo..a.len()).take_while(|&j| a[j] < x + cfg.tol).find(|&j| !taken[j]);
        if let Some(j) = found {
            taken[j] = true;
            tp += 1;
        }
    }
    let fp = p.len() as u64 - tp;
    let fn_ = a.len() as u64 - tp;
    let tn = (total_frames as u64).saturating_sub(tp + fp + fn_);
    Ok(BinaryCounts::new(tp, fp, fn_, tn))
}

pub fn hit_tolerance_report(
    pred: &[usize],
    actual: &[usize],
    total_frames: usize,
    cfg: ToleranceConfig,
) -> Result<HitReport> {
    let counts = hit_tolerance_counts(pred, actual, total_frames, cfg)?;
    Ok(HitReport { tol: cfg.tol, counts, metrics: binary_metrics(&counts)? })
}

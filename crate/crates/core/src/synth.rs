//! Deterministic synthetic rallies with ground truth for every stage.
//!
//! A rally is a steady run, two to six alternating flight runs (B/U), and a
//! trailing steady run after the landing. Poses encode the flight: the player
//! who just struck holds a raised racket wrist that sinks over the flight,
//! while the receiver crouches and reaches as the shuttle approaches. Both
//! players drift across their half of the court between shots.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, rally, frame, channel)`, so any rally or frame can be generated in
//! isolation and in any order.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::direction::{DirectionSequence, DirectionToken, KSeqRecord};
use crate::error::{Error, Result};
use crate::frames::{write_frame_stack, RgbFrame};
use crate::geometry::{CourtKeypoints, PlayerKeypointPair, Point2, SkeletonKeypoints, KEYPOINTS_PER_PERSON};
use crate::hits::{detect_hits, HitRecord};
use crate::io::{rally_id, write_json, write_jsonl, KeypointFrameRecord, SegmentsRecord, SCHEMA_VERSION};
use crate::rally::{AngleStream, RallySegment, ShotAngleToken};

pub const TRAIN_VIDEO: &str = "synth_train";
pub const TEST_VIDEO: &str = "synth_test";
pub const IMAGES_TRAIN: &str = "synth_images_train";
pub const IMAGES_TEST: &str = "synth_images_test";

/// Output file names inside the dataset directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const KSEQ_TRAIN: &str = "kseq_train.jsonl";
    pub const KSEQ_TEST: &str = "kseq_test.jsonl";
    pub const ANGLES: &str = "angles.jsonl";
    pub const SEGMENTS: &str = "segments_gold.jsonl";
    pub const HITS: &str = "hits_gold.jsonl";
    pub const KEYPOINTS_TEST: &str = "keypoints_test.jsonl";
    pub const FRAMES_TEST: &str = "frames_test.hftc";
    pub const IMAGES_TRAIN: &str = "angle_images_train.hftc";
    pub const LABELS_TRAIN: &str = "angle_labels_train.jsonl";
    pub const IMAGES_TEST: &str = "angle_images_test.hftc";
    pub const LABELS_TEST: &str = "angle_labels_test.jsonl";
}

// Random stream channels.
const STRUCTURE: u64 = 0;
const NOISE: u64 = 1;
const DETECTOR_ORDER: u64 = 2;
const IMAGE: u64 = 3;
const IMAGE_LABEL: u64 = 4;

fn keyed_rng(seed: u64, a: u64, b: u64, channel: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, a, b, channel].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn draw_range(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Frame size of rendered shot-angle images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageProfile {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub rallies: usize,
    pub fps: f64,
    /// Inclusive range of every token run's length, in frames.
    pub run_length: (usize, usize),
    /// Inclusive range of flight runs (shots) per rally.
    pub shots: (usize, usize),
    /// Inclusive range of Other frames before each rally.
    pub gap: (usize, usize),
    /// Standard deviation of per-coordinate Gaussian keypoint noise, pixels.
    pub noise_std: f64,
    pub court: CourtKeypoints,
    /// Nominal standing heights of the near and far player, pixels.
    pub bottom_height: f64,
    pub top_height: f64,
    /// Upper bound on off-court detections (spectators, officials) per rally.
    pub max_spectators: usize,
    /// Fraction of rallies in the training split.
    pub train_fraction: f64,
    pub image: ImageProfile,
    /// Labeled shot-angle images in the train and test image sets.
    pub image_samples: (usize, usize),
    /// Write rendered frames and image sets.
    pub write_images: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rallies: 250,
            fps: 30.0,
            run_length: (6, 14),
            shots: (2, 6),
            gap: (10, 30),
            noise_std: 2.0,
            court: default_court(),
            bottom_height: 220.0,
            top_height: 140.0,
            max_spectators: 2,
            train_fraction: 0.8,
            image: ImageProfile { height: 36, width: 64 },
            image_samples: (400, 100),
            write_images: true,
        }
    }
}

/// Singles court in a 1920×1080 broadcast frame.
pub fn default_court() -> CourtKeypoints {
    CourtKeypoints::new([
        Point2::new(760.0, 300.0),
        Point2::new(1160.0, 300.0),
        Point2::new(680.0, 560.0),
        Point2::new(1240.0, 560.0),
        Point2::new(560.0, 950.0),
        Point2::new(1360.0, 950.0),
    ])
    .expect("valid default court")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (usize, usize)| lo <= hi;
        if self.run_length.0 == 0 || !range_ok(self.run_length) {
            return Err(Error::Config(format!("bad run-length range {:?}", self.run_length)));
        }
        if self.shots.0 == 0 || !range_ok(self.shots) {
            return Err(Error::Config(format!("bad shot range {:?}", self.shots)));
        }
        if self.gap.0 == 0 || !range_ok(self.gap) {
            return Err(Error::Config(format!("bad gap range {:?}", self.gap)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std must be ≥ 0, got {}", self.noise_std)));
        }
        if self.rallies == 0 {
            return Err(Error::Config("need at least one rally".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1]".into()));
        }
        if [self.fps, self.bottom_height, self.top_height].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::Config("fps and player heights must be positive".into()));
        }
        if self.image.height < 2 || self.image.width < 2 {
            return Err(Error::Config("image profile must be at least 2×2".into()));
        }
        Ok(())
    }

    /// Longest possible rally: lead, shots and trail runs all at maximum length.
    pub fn max_rally_len(&self) -> usize {
        (self.shots.1 + 2) * self.run_length.1
    }

    pub fn train_count(&self) -> usize {
        (self.rallies as f64 * self.train_fraction).round() as usize
    }

    /// Frames reserved per rally in its video.
    fn slot_len(&self) -> usize {
        self.gap.1 + self.max_rally_len()
    }

    /// Video id and slot of a rally.
    fn placement(&self, rally_index: usize) -> (&'static str, usize) {
        let n_train = self.train_count();
        if rally_index < n_train {
            (TRAIN_VIDEO, rally_index)
        } else {
            (TEST_VIDEO, rally_index - n_train)
        }
    }

    /// Rallies placed in `video`.
    pub fn rallies_in(&self, video: &str) -> std::ops::Range<usize> {
        let n_train = self.train_count();
        if video == TRAIN_VIDEO {
            0..n_train
        } else {
            n_train..self.rallies
        }
    }

    /// Frame count of `video`: all slots plus one trailing gap.
    pub fn video_len(&self, video: &str) -> usize {
        self.rallies_in(video).len() * self.slot_len() + self.gap.1
    }
}

/// One generated rally with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRally {
    pub rally_index: usize,
    pub rally_id: String,
    pub video_id: String,
    /// Span of the rally (High frames) within its video.
    pub segment: RallySegment,
    pub directions: DirectionSequence,
    /// Noisy two-player keypoints per rally frame.
    pub pairs: Vec<PlayerKeypointPair>,
    /// Raw detector output per rally frame: the players plus off-court
    /// people, in arbitrary order.
    pub detections: Vec<Vec<SkeletonKeypoints>>,
    pub hits_local: Vec<usize>,
    pub hits_global: Vec<usize>,
}

impl SynthRally {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn kseq(&self) -> Result<KSeqRecord> {
        let mut r =
            KSeqRecord::new(self.rally_id.clone(), self.pairs.clone(), Some(&self.directions.tokens))?;
        r.video_id = Some(self.video_id.clone());
        r.start_frame = Some(self.segment.start_frame);
        Ok(r)
    }
}

// ---------------------------------------------------------------------------
// Poses
// ---------------------------------------------------------------------------

/// Standing pose in units of body height, relative to the ankle midpoint
/// (image `y` grows downward).
const STANCE: [(f64, f64); KEYPOINTS_PER_PERSON] = [
    (0.0, -0.93),   // nose
    (-0.02, -0.95), // left eye
    (0.02, -0.95),  // right eye
    (-0.04, -0.94), // left ear
    (0.04, -0.94),  // right ear
    (-0.11, -0.80), // left shoulder
    (0.11, -0.80),  // right shoulder
    (-0.14, -0.63), // left elbow
    (0.15, -0.66),  // right elbow
    (-0.15, -0.48), // left wrist
    (0.17, -0.70),  // right wrist (racket hand, ready position)
    (-0.07, -0.50), // left hip
    (0.07, -0.50),  // right hip
    (-0.08, -0.27), // left knee
    (0.08, -0.27),  // right knee
    (-0.09, 0.0),   // left ankle
    (0.09, 0.0),    // right ankle
];

const R_ELBOW: usize = 8;
const R_WRIST: usize = 10;

#[derive(Debug, Clone, Copy)]
enum Role {
    Ready,
    /// Just struck the shuttle; `phase` runs 0→1 over the flight.
    Hitter {
        phase: f64,
    },
    /// Waiting for the shuttle; `phase` runs 0→1 over the flight.
    Receiver {
        phase: f64,
    },
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn pose(role: Role) -> [(f64, f64); KEYPOINTS_PER_PERSON] {
    let mut p = STANCE;
    match role {
        Role::Ready => {}
        Role::Hitter { phase } => {
            let a = 1.0 - 0.6 * phase;
            p[R_WRIST] = (lerp(p[R_WRIST].0, 0.22, a), lerp(p[R_WRIST].1, -1.22, a));
            p[R_ELBOW] = (lerp(p[R_ELBOW].0, 0.19, a), lerp(p[R_ELBOW].1, -0.98, a));
            for s in [5, 6] {
                p[s].0 += 0.03 * a;
            }
        }
        Role::Receiver { phase } => {
            let b = 0.4 + 0.6 * phase;
            for (i, q) in p.iter_mut().enumerate() {
                match i {
                    0..=12 => q.1 += 0.10 * b,
                    13 | 14 => q.1 += 0.05 * b,
                    _ => {}
                }
            }
            p[15].0 -= 0.06 * b;
            p[16].0 += 0.06 * b;
            p[R_WRIST] = (lerp(p[R_WRIST].0, 0.34, b), lerp(p[R_WRIST].1, -0.72, b));
            p[R_ELBOW] = (lerp(p[R_ELBOW].0, 0.25, b), lerp(p[R_ELBOW].1, -0.70, b));
        }
    }
    p
}

fn place(rel: &[(f64, f64); KEYPOINTS_PER_PERSON], at: Point2, height: f64) -> SkeletonKeypoints {
    SkeletonKeypoints(std::array::from_fn(|i| {
        Point2::new(at.x + rel[i].0 * height, at.y + rel[i].1 * height)
    }))
}

/// Horizontal extent of the court at image row `y`.
fn court_span(court: &CourtKeypoints, y: f64) -> (f64, f64) {
    let edge = |a: Point2, b: Point2| lerp(a.x, b.x, (y - a.y) / (b.y - a.y));
    (edge(court.upper_left, court.bottom_left), edge(court.upper_right, court.bottom_right))
}

/// Random ankle position in the near (`bottom`) or far half of the court.
fn court_position(rng: &mut ChaCha8Rng, court: &CourtKeypoints, bottom: bool) -> Point2 {
    let top_y = court.upper_left.y.max(court.upper_right.y);
    let bot_y = court.bottom_left.y.min(court.bottom_right.y);
    let mid = (top_y + bot_y) / 2.0;
    let span = bot_y - top_y;
    let (lo, hi) = if bottom {
        (mid + 0.12 * span, bot_y - 0.08 * span)
    } else {
        (top_y + 0.05 * span, mid - 0.08 * span)
    };
    let y = rng.random_range(lo..hi);
    let (l, r) = court_span(court, y);
    let margin = 0.1 * (r - l);
    Point2::new(rng.random_range(l + margin..r - margin), y)
}

// ---------------------------------------------------------------------------
// Rally generation
// ---------------------------------------------------------------------------

pub fn generate_rally(cfg: &SynthConfig, rally_index: usize) -> Result<SynthRally> {
    cfg.validate()?;
    if rally_index >= cfg.rallies {
        return Err(Error::Range { index: rally_index, len: cfg.rallies });
    }
    let idx = rally_index as u64;
    let mut rng = keyed_rng(cfg.seed, idx, u64::MAX, STRUCTURE);

    // Token runs.
    let shots = draw_range(&mut rng, cfg.shots);
    let first = if rng.random_bool(0.5) { DirectionToken::B } else { DirectionToken::U };
    let mut runs = vec![DirectionToken::S];
    for k in 0..shots {
        let flip = k % 2 == 1;
        runs.push(match (first, flip) {
            (DirectionToken::B, false) | (DirectionToken::U, true) => DirectionToken::B,
            _ => DirectionToken::U,
        });
    }
    runs.push(DirectionToken::S);
    let lengths: Vec<usize> = runs.iter().map(|_| draw_range(&mut rng, cfg.run_length)).collect();
    let total: usize = lengths.iter().sum();

    // Placement in the video.
    let (video_id, slot) = cfg.placement(rally_index);
    let start = slot * cfg.slot_len() + draw_range(&mut rng, cfg.gap);
    let segment = RallySegment::new(start, start + total - 1)?;

    // Per-rally body sizes, court positions at each run boundary, spectators.
    let hb = cfg.bottom_height * rng.random_range(0.92..1.08);
    let ht = cfg.top_height * rng.random_range(0.92..1.08);
    let waypoints: Vec<(Point2, Point2)> = (0..=runs.len())
        .map(|_| (court_position(&mut rng, &cfg.court, true), court_position(&mut rng, &cfg.court, false)))
        .collect();
    let n_spec = rng.random_range(0..=cfg.max_spectators);
    let spectators: Vec<(Point2, f64)> = (0..n_spec)
        .map(|_| {
            let left = rng.random_bool(0.5);
            let x = if left {
                rng.random_range(60.0..cfg.court.bottom_left.x - 200.0)
            } else {
                rng.random_range(cfg.court.bottom_right.x + 200.0..1860.0)
            };
            (Point2::new(x, rng.random_range(500.0..1000.0)), rng.random_range(150.0..260.0))
        })
        .collect();

    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut tokens = Vec::with_capacity(total);
    let mut pairs = Vec::with_capacity(total);
    let mut detections = Vec::with_capacity(total);
    let mut frame = 0usize;
    for (k, (&dir, &len)) in runs.iter().zip(&lengths).enumerate() {
        for t in 0..len {
            let phase = if len > 1 { t as f64 / (len - 1) as f64 } else { 0.0 };
            let (bottom_role, top_role) = match dir {
                DirectionToken::B => (Role::Receiver { phase }, Role::Hitter { phase }),
                DirectionToken::U => (Role::Hitter { phase }, Role::Receiver { phase }),
                _ => (Role::Ready, Role::Ready),
            };
            let (b0, t0) = waypoints[k];
            let (b1, t1) = waypoints[k + 1];
            let s = t as f64 / len as f64;
            let at_b = Point2::new(lerp(b0.x, b1.x, s), lerp(b0.y, b1.y, s));
            let at_t = Point2::new(lerp(t0.x, t1.x, s), lerp(t0.y, t1.y, s));
            let mut bottom = place(&pose(bottom_role), at_b, hb);
            let mut top = place(&pose(top_role), at_t, ht);

            let global = (start + frame) as u64;
            let mut people: Vec<SkeletonKeypoints> =
                spectators.iter().map(|&(at, h)| place(&STANCE, at, h)).collect();
            if let Some(n) = &noise {
                let mut nr = keyed_rng(cfg.seed, idx, global, NOISE);
                for sk in [&mut bottom, &mut top].into_iter().chain(people.iter_mut()) {
                    for p in sk.0.iter_mut() {
                        p.x += n.sample(&mut nr);
                        p.y += n.sample(&mut nr);
                    }
                }
            }
            people.push(bottom);
            people.push(top);
            people.shuffle(&mut keyed_rng(cfg.seed, idx, global, DETECTOR_ORDER));

            tokens.push(dir);
            pairs.push(PlayerKeypointPair { bottom_player: bottom, top_player: top });
            detections.push(people);
            frame += 1;
        }
    }

    let rid = rally_id(video_id, slot);
    let directions =
        DirectionSequence::new(rid.clone(), tokens)?.with_origin(Some(video_id.to_string()), Some(start));
    let hits_local = detect_hits(&directions)?.indices;
    let hits_global = hits_local.iter().map(|h| h + start).collect();
    Ok(SynthRally {
        rally_index,
        rally_id: rid,
        video_id: video_id.to_string(),
        segment,
        directions,
        pairs,
        detections,
        hits_local,
        hits_global,
    })
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// Renders a shot-angle frame. High frames show the court from the overhead
/// broadcast camera: a lit trapezoid with white boundary and mid-court lines
/// on a darker surround. Other frames are close-ups: flat backgrounds
/// crossed by a few random color blocks.
pub fn render_frame(profile: ImageProfile, angle: ShotAngleToken, rng: &mut ChaCha8Rng) -> Result<RgbFrame> {
    let (h, w) = (profile.height, profile.width);
    let mut img = vec![[0.0f64; 3]; h * w];
    match angle {
        ShotAngleToken::High => {
            let surround =
                [rng.random_range(0.05..0.25), rng.random_range(0.15..0.35), rng.random_range(0.1..0.3)];
            let floor =
                [rng.random_range(0.1..0.25), rng.random_range(0.45..0.65), rng.random_range(0.25..0.4)];
            let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.03..0.03);
            let top = (0.25 + jitter(rng)) * h as f64;
            let bot = (0.9 + jitter(rng)) * h as f64;
            let cx = (0.5 + jitter(rng)) * w as f64;
            let half_top = (0.11 + jitter(rng)) * w as f64;
            let half_bot = (0.22 + jitter(rng)) * w as f64;
            let mid = (top + bot) / 2.0;
            for y in 0..h {
                let yf = y as f64 + 0.5;
                let t = (yf - top) / (bot - top);
                let half = lerp(half_top, half_bot, t);
                for x in 0..w {
                    let xf = x as f64 + 0.5;
                    let inside = (0.0..=1.0).contains(&t) && (xf - cx).abs() <= half;
                    let edge = inside
                        && ((xf - cx).abs() > half - 1.0
                            || (yf - top).abs() < 1.0
                            || (yf - bot).abs() < 1.0
                            || (yf - mid).abs() < 0.5);
                    img[y * w + x] = if edge {
                        [0.92; 3]
                    } else if inside {
                        floor
                    } else {
                        surround
                    };
                }
            }
        }
        ShotAngleToken::Other => {
            let bg = [rng.random(), rng.random(), rng.random()];
            img.iter_mut().for_each(|p| *p = bg);
            for _ in 0..rng.random_range(2..6) {
                let c = [rng.random(), rng.random(), rng.random()];
                let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
                let (bh, bw) = (rng.random_range(2..=h / 2), rng.random_range(2..=w / 2));
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        img[y * w + x] = c;
                    }
                }
            }
        }
    }
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.iter().enumerate() {
        for c in 0..3 {
            let v: f64 = px[c] + rng.random_range(-0.03..0.03);
            data[c * plane + i] = v.clamp(0.0, 1.0);
        }
    }
    RgbFrame::new(h, w, data)
}

fn image_key(video: &str) -> u64 {
    match video {
        TRAIN_VIDEO => 0,
        TEST_VIDEO => 1,
        IMAGES_TRAIN => 2,
        _ => 3,
    }
}

/// Frame `frame` of `video` rendered for its gold shot angle.
pub fn video_frame(cfg: &SynthConfig, video: &str, frame: usize, angle: ShotAngleToken) -> Result<RgbFrame> {
    let mut rng = keyed_rng(cfg.seed, u64::MAX - image_key(video), frame as u64, IMAGE);
    render_frame(cfg.image, angle, &mut rng)
}

/// A labeled image set of `n` frames with classes drawn with equal odds.
pub fn image_set(cfg: &SynthConfig, name: &str, n: usize) -> Result<(Vec<RgbFrame>, AngleStream)> {
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut lr = keyed_rng(cfg.seed, u64::MAX - image_key(name), i as u64, IMAGE_LABEL);
        let angle = if lr.random_bool(0.5) { ShotAngleToken::High } else { ShotAngleToken::Other };
        frames.push(video_frame(cfg, name, i, angle)?);
        labels.push(angle);
    }
    Ok((frames, AngleStream::new(name, cfg.fps, labels)?))
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Per-split counts in the layout of a KSeq dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub keypoint_sequences: usize,
    pub keypoint_pairs: usize,
    pub s_frames: usize,
    pub b_frames: usize,
    pub u_frames: usize,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub splits: Vec<SplitSummary>,
}

impl DatasetSummary {
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>19} {:>15} {:>8} {:>8} {:>8} {:>6}\n",
            "split", "keypoint sequences", "keypoint pairs", "S", "B", "U", "hits"
        );
        for s in &self.splits {
            out.push_str(&format!(
                "{:<8} {:>19} {:>15} {:>8} {:>8} {:>8} {:>6}\n",
                s.split, s.keypoint_sequences, s.keypoint_pairs, s.s_frames, s.b_frames, s.u_frames, s.hits
            ));
        }
        out
    }
}

fn summarize(split: &str, rallies: &[SynthRally]) -> SplitSummary {
    let count = |t: DirectionToken| {
        rallies.iter().map(|r| r.directions.tokens.iter().filter(|&&x| x == t).count()).sum()
    };
    SplitSummary {
        split: split.to_string(),
        keypoint_sequences: rallies.len(),
        keypoint_pairs: rallies.iter().map(SynthRally::len).sum(),
        s_frames: count(DirectionToken::S),
        b_frames: count(DirectionToken::B),
        u_frames: count(DirectionToken::U),
        hits: rallies.iter().map(|r| r.hits_local.len()).sum(),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config: &'a SynthConfig,
    files: Vec<&'static str>,
    summary: &'a DatasetSummary,
}

/// Gold per-frame shot angles of a video.
pub fn video_angles(cfg: &SynthConfig, video: &str, rallies: &[SynthRally]) -> Result<AngleStream> {
    let mut tokens = vec![ShotAngleToken::Other; cfg.video_len(video)];
    for r in rallies.iter().filter(|r| r.video_id == video) {
        for f in r.segment.frames() {
            tokens[f] = ShotAngleToken::High;
        }
    }
    AngleStream::new(video, cfg.fps, tokens)
}

/// Detector output for every frame of a video; frames outside rallies carry
/// no detections. The court is attached to the first record only.
pub fn video_keypoints(cfg: &SynthConfig, video: &str, rallies: &[SynthRally]) -> Vec<KeypointFrameRecord> {
    let mut records: Vec<KeypointFrameRecord> = (0..cfg.video_len(video))
        .map(|frame| KeypointFrameRecord {
            schema_version: SCHEMA_VERSION,
            video_id: video.to_string(),
            frame,
            instances: Vec::new(),
            court: None,
        })
        .collect();
    for r in rallies.iter().filter(|r| r.video_id == video) {
        for (i, d) in r.detections.iter().enumerate() {
            records[r.segment.start_frame + i].instances = d.clone();
        }
    }
    if let Some(first) = records.first_mut() {
        first.court = Some(cfg.court);
    }
    records
}

/// Writes the full dataset into `dir` (created if needed) and returns its summary.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<DatasetSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let rallies = (0..cfg.rallies).map(|i| generate_rally(cfg, i)).collect::<Result<Vec<_>>>()?;
    let n_train = cfg.train_count();
    let (train, test) = rallies.split_at(n_train);

    let kseq = |rs: &[SynthRally]| rs.iter().map(SynthRally::kseq).collect::<Result<Vec<_>>>();
    write_jsonl(&dir.join(files::KSEQ_TRAIN), &kseq(train)?)?;
    write_jsonl(&dir.join(files::KSEQ_TEST), &kseq(test)?)?;

    let videos = [TRAIN_VIDEO, TEST_VIDEO];
    let angles = videos.iter().map(|v| video_angles(cfg, v, &rallies)).collect::<Result<Vec<_>>>()?;
    write_jsonl(&dir.join(files::ANGLES), &angles)?;

    let segments: Vec<SegmentsRecord> = videos
        .iter()
        .map(|v| {
            SegmentsRecord::new(*v, rallies.iter().filter(|r| r.video_id == *v).map(|r| r.segment).collect())
        })
        .collect();
    write_jsonl(&dir.join(files::SEGMENTS), &segments)?;

    let hits = rallies
        .iter()
        .map(|r| {
            HitRecord::new(
                r.video_id.clone(),
                &crate::hits::HitFrameSet { rally_id: r.rally_id.clone(), indices: r.hits_local.clone() },
                &r.segment,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&dir.join(files::HITS), &hits)?;

    write_jsonl(&dir.join(files::KEYPOINTS_TEST), &video_keypoints(cfg, TEST_VIDEO, &rallies))?;

    let mut written = vec![
        files::KSEQ_TRAIN,
        files::KSEQ_TEST,
        files::ANGLES,
        files::SEGMENTS,
        files::HITS,
        files::KEYPOINTS_TEST,
    ];
    if cfg.write_images {
        let test_angles = &angles[1];
        let frames = test_angles
            .tokens
            .iter()
            .enumerate()
            .map(|(f, &a)| video_frame(cfg, TEST_VIDEO, f, a))
            .collect::<Result<Vec<_>>>()?;
        write_frame_stack(&dir.join(files::FRAMES_TEST), &frames)?;
        for (name, n, img_file, label_file) in [
            (IMAGES_TRAIN, cfg.image_samples.0, files::IMAGES_TRAIN, files::LABELS_TRAIN),
            (IMAGES_TEST, cfg.image_samples.1, files::IMAGES_TEST, files::LABELS_TEST),
        ] {
            if n == 0 {
                continue;
            }
            let (frames, labels) = image_set(cfg, name, n)?;
            write_frame_stack(&dir.join(img_file), &frames)?;
            write_jsonl(&dir.join(label_file), [&labels])?;
            written.extend([img_file, label_file]);
        }
        written.push(files::FRAMES_TEST);
    }

    let summary = DatasetSummary { splits: vec![summarize("train", train), summarize("test", test)] };
    written.sort_unstable();
    write_json(
        &dir.join(files::MANIFEST),
        &Manifest { schema_version: SCHEMA_VERSION, config: cfg, files: written, summary: &summary },
    )?;
    Ok(summary)
}

//! Per-stage operations shared by the subcommands and the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use hitframe::angle::SACNN_KIND;
use hitframe::angle::{classify_inputs, AngleDataset, AngleTrainConfig};
use hitframe::frames::load_frames;
use hitframe::io::{rally_id, read_jsonl, KeypointFrameRecord, SegmentsRecord};
use hitframe::nn::checkpoint::{Checkpoint, EpochRecord};
use hitframe::transformer::{DirectionTrainConfig, DIRECTION_KIND};
use hitframe::{
    detect_hits, filter_players, preprocess, segment_rallies, smooth_stream, train_direction_model,
    train_sacnn, AngleStream, CourtKeypoints, DirectionModel, DirectionSequence, HitRecord, KSeqRecord,
    LengthMode, PlayerKeypointPair, RallySegment, SaCnn, SaCnnConfig, ShotAngleToken, SkeletonKeypoints,
    TransformerConfig,
};
use serde::{Deserialize, Serialize};

/// A required input file or directory does not exist (exit code 2).
#[derive(Debug)]
pub struct MissingInput(pub String);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing input: {}", self.0)
    }
}

impl std::error::Error for MissingInput {}

pub fn require(path: &Path) -> anyhow::Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingInput(path.display().to_string()).into())
    }
}

pub fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    read_jsonl(require(path)?).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small network and short schedule for CPU runs.
    #[default]
    Desk,
    /// Full-size network and schedule.
    Full,
}

// ---------------------------------------------------------------------------
// Shot angles and rallies
// ---------------------------------------------------------------------------

/// Concatenated labels of one or more angle streams.
pub fn load_angle_labels(path: &Path) -> anyhow::Result<Vec<ShotAngleToken>> {
    let streams: Vec<AngleStream> = read_records(path)?;
    Ok(streams.into_iter().flat_map(|s| s.tokens).collect())
}

pub fn train_angle(
    images: &Path,
    labels: &Path,
    profile: Profile,
    epochs: Option<usize>,
    seed: u64,
) -> anyhow::Result<Checkpoint<SaCnnConfig>> {
    let frames = load_frames(require(images)?).with_context(|| format!("loading {}", images.display()))?;
    let labels = load_angle_labels(labels)?;
    if frames.len() != labels.len() {
        bail!("{} images but {} labels", frames.len(), labels.len());
    }
    let (config, mut train) = match profile {
        Profile::Desk => (SaCnnConfig::desk(), AngleTrainConfig::desk(seed)),
        Profile::Full => (SaCnnConfig::full(), AngleTrainConfig::full(seed)),
    };
    if let Some(e) = epochs {
        train.epochs = e;
    }
    let data = AngleDataset::from_frames(&frames, &labels, &config.preprocess)?;
    let model = SaCnn::new(config, seed)?;
    Ok(train_sacnn(model, &data, &train)?)
}

pub fn load_angle_model(path: &Path) -> anyhow::Result<SaCnn> {
    let ck = Checkpoint::load(require(path)?, SACNN_KIND)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(SaCnn::from_checkpoint(ck)?)
}

pub fn classify(model: &SaCnn, frames: &Path, video_id: &str, fps: f64) -> anyhow::Result<AngleStream> {
    let frames = load_frames(require(frames)?).with_context(|| format!("loading {}", frames.display()))?;
    let inputs = frames
        .iter()
        .map(|f| preprocess(f, &model.config.preprocess))
        .collect::<hitframe::Result<Vec<_>>>()?;
    Ok(AngleStream::new(video_id, fps, classify_inputs(model, &inputs)?)?)
}

/// Smooths (when `min_run > 1`) and segments a stream.
pub fn segment(stream: &AngleStream, min_run: usize) -> anyhow::Result<SegmentsRecord> {
    let smoothed = if min_run > 1 { smooth_stream(stream, min_run)? } else { stream.clone() };
    Ok(SegmentsRecord::new(stream.video_id.clone(), segment_rallies(&smoothed)?))
}

// ---------------------------------------------------------------------------
// Keypoint filtering
// ---------------------------------------------------------------------------

/// Detector output of one video, indexed by frame.
#[derive(Debug, Default)]
pub struct VideoKeypoints {
    frames: BTreeMap<usize, Vec<SkeletonKeypoints>>,
    courts: BTreeMap<usize, CourtKeypoints>,
}

impl VideoKeypoints {
    /// The most recent court at or before `frame`.
    pub fn court_at(&self, frame: usize) -> Option<&CourtKeypoints> {
        self.courts.range(..=frame).next_back().map(|(_, c)| c)
    }

    pub fn instances(&self, frame: usize) -> &[SkeletonKeypoints] {
        self.frames.get(&frame).map_or(&[], Vec::as_slice)
    }
}

pub fn index_keypoints(records: Vec<KeypointFrameRecord>) -> BTreeMap<String, VideoKeypoints> {
    let mut out: BTreeMap<String, VideoKeypoints> = BTreeMap::new();
    for r in records {
        let v = out.entry(r.video_id).or_default();
        if let Some(c) = r.court {
            v.courts.insert(r.frame, c);
        }
        v.frames.insert(r.frame, r.instances);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    /// Abort on the first frame that does not yield two players.
    pub strict: bool,
    /// In lenient mode, reuse the last good pair for a bad frame.
    pub hold_last: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { strict: false, hold_last: true }
    }
}

/// Result of filtering one rally.
#[derive(Debug)]
pub struct FilteredRally {
    pub record: KSeqRecord,
    /// Global frames whose pair was substituted.
    pub substituted: Vec<usize>,
}

/// Picks the two players in every frame of `segment`. Frames without two
/// on-court players fail in strict mode; otherwise they take the previous
/// good pair, and leading failures take the first good pair. A rally with
/// no good frame at all is an error in both modes.
pub fn filter_rally(
    video_id: &str,
    index: usize,
    segment: &RallySegment,
    kp: &VideoKeypoints,
    opts: FilterOptions,
) -> anyhow::Result<FilteredRally> {
    let mut pairs: Vec<Option<PlayerKeypointPair>> = Vec::with_capacity(segment.len());
    for frame in segment.frames() {
        let court = kp.court_at(frame).ok_or_else(|| {
            MissingInput(format!("video {video_id}: court keypoints at or before frame {frame}"))
        })?;
        match filter_players(kp.instances(frame), court) {
            Ok(p) => pairs.push(Some(p)),
            Err(e @ hitframe::Error::InsufficientPlayers { .. }) => {
                if opts.strict || !opts.hold_last {
                    bail!("video {video_id} frame {frame}: {e}");
                }
                pairs.push(None);
            }
            Err(e) => return Err(e).with_context(|| format!("video {video_id} frame {frame}")),
        }
    }
    let Some(first) = pairs.iter().flatten().next().copied() else {
        bail!(
            "video {video_id} frames {}..={}: no frame has two players on court",
            segment.start_frame,
            segment.end_frame
        );
    };
    let mut substituted = Vec::new();
    let mut last = first;
    let filled: Vec<PlayerKeypointPair> = pairs
        .into_iter()
        .zip(segment.frames())
        .map(|(p, frame)| match p {
            Some(p) => {
                last = p;
                p
            }
            None => {
                substituted.push(frame);
                last
            }
        })
        .collect();
    let mut record = KSeqRecord::new(rally_id(video_id, index), filled, None)?;
    record.video_id = Some(video_id.to_string());
    record.start_frame = Some(segment.start_frame);
    Ok(FilteredRally { record, substituted })
}

// ---------------------------------------------------------------------------
// Directions and hits
// ---------------------------------------------------------------------------

pub fn train_direction(
    records: &[KSeqRecord],
    profile: Profile,
    epochs: Option<usize>,
    seed: u64,
    length_mode: LengthMode,
) -> anyhow::Result<Checkpoint<TransformerConfig>> {
    let (config, mut train) = match profile {
        Profile::Desk => (TransformerConfig::desk(), DirectionTrainConfig::desk(seed)),
        Profile::Full => (TransformerConfig::full(), DirectionTrainConfig::full(seed)),
    };
    if let Some(e) = epochs {
        train.epochs = e;
    }
    train.length_mode = length_mode;
    Ok(train_direction_model(records, &config, &train)?)
}

pub fn load_direction_model(path: &Path) -> anyhow::Result<DirectionModel> {
    let ck = Checkpoint::load(require(path)?, DIRECTION_KIND)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(DirectionModel::from_checkpoint(ck)?)
}

/// Hits of a direction sequence placed in its video. The sequence must carry
/// its video and start frame.
pub fn hits_for(seq: &DirectionSequence) -> anyhow::Result<HitRecord> {
    let (Some(video), Some(start)) = (&seq.video_id, seq.start_frame) else {
        bail!("rally {}: direction sequence has no video id or start frame", seq.rally_id);
    };
    let hits = detect_hits(seq).with_context(|| format!("rally {}", seq.rally_id))?;
    let segment = RallySegment::new(start, start + seq.len().max(1) - 1)?;
    Ok(HitRecord::new(video.clone(), &hits, &segment)?)
}

pub fn loss_summary(history: &[EpochRecord]) -> String {
    match (history.first(), history.last()) {
        (Some(a), Some(b)) => format!("{} epoch(s), loss {:.4} -> {:.4}", history.len(), a.loss, b.loss),
        _ => "0 epochs".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hitframe::synth::default_court;
    use hitframe::Point2;

    fn person(x: f64, y: f64) -> SkeletonKeypoints {
        SkeletonKeypoints([Point2 { x, y }; 17])
    }

    fn video(frames: &[Vec<SkeletonKeypoints>]) -> VideoKeypoints {
        let records = frames
            .iter()
            .enumerate()
            .map(|(i, inst)| KeypointFrameRecord {
                schema_version: 1,
                video_id: "v".into(),
                frame: i,
                instances: inst.clone(),
                court: (i == 0).then(default_court),
            })
            .collect();
        index_keypoints(records).remove("v").unwrap()
    }

    #[test]
    fn hold_last_backfills_and_substitutes() {
        let good = vec![person(900.0, 800.0), person(950.0, 400.0)];
        let kp = video(&[vec![], good.clone(), vec![person(900.0, 800.0)], good]);
        let seg = RallySegment::new(0, 3).unwrap();
        let out = filter_rally("v", 2, &seg, &kp, FilterOptions::default()).unwrap();
        assert_eq!(out.substituted, vec![0, 2]);
        assert_eq!(out.record.rally_id, "v/r0002");
        assert_eq!(out.record.start_frame, Some(0));
        let pairs = out.record.pairs();
        assert!(pairs.windows(2).all(|w| w[0] == w[1]));

        let strict = FilterOptions { strict: true, hold_last: true };
        let err = filter_rally("v", 0, &seg, &kp, strict).unwrap_err().to_string();
        assert!(err.contains("frame 0"), "{err}");
    }

    #[test]
    fn rally_without_players_fails() {
        let kp = video(&[vec![], vec![]]);
        let seg = RallySegment::new(0, 1).unwrap();
        assert!(filter_rally("v", 0, &seg, &kp, FilterOptions::default()).is_err());
    }

    #[test]
    fn court_carries_forward() {
        let kp = video(&[vec![], vec![]]);
        assert!(kp.court_at(1).is_some());
    }

    #[test]
    fn hits_are_placed_globally() {
        let seq =
            DirectionSequence::new("v/r0000", hitframe::direction::directions_from_str("SSBBU").unwrap())
                .unwrap()
                .with_origin(Some("v".into()), Some(100));
        let h = hits_for(&seq).unwrap();
        assert_eq!(h.hits_local, vec![2, 4]);
        assert_eq!(h.hits_global, vec![102, 104]);
        assert!(hits_for(&DirectionSequence::new("x", vec![]).unwrap()).is_err());
    }
}

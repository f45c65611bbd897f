//! Hit-frame detection for badminton broadcast video.
//!
//! The pipeline classifies each frame's camera angle, trims rallies from the
//! angle stream, filters and normalizes the two players' pose keypoints,
//! labels the shuttlecock direction per frame with a transformer encoder,
//! and reads hit frames off direction changes.

pub mod angle;
pub mod direction;
pub mod error;
pub mod eval;
pub mod frames;
pub mod geometry;
pub mod hits;
pub mod io;
pub mod nn;
pub mod rally;
pub mod synth;
pub mod transformer;

pub use angle::{classify_stream, preprocess, train_sacnn, PreprocessConfig, SaCnn, SaCnnConfig};
pub use direction::{DirectionSequence, DirectionToken, KSeqFrame, KSeqRecord, LabelToken};
pub use error::{Error, Result};
pub use eval::{
    binary_metrics, hit_tolerance_report, token_report, trimming_report, BinaryCounts, HitReport, Metrics,
    TokenReport, ToleranceConfig, TrimmingReport,
};
pub use frames::RgbFrame;
pub use geometry::{
    filter_players, normalize_pair, point_in_court, CourtKeypoints, KeypointStats, PlayerKeypointPair,
    Point2, SkeletonKeypoints,
};
pub use hits::{detect_hits, to_global, HitFrameSet, HitRecord};
pub use rally::{segment_rallies, smooth_stream, AngleStream, RallySegment, ShotAngleToken};
pub use synth::{generate_dataset, generate_rally, SynthConfig, SynthRally};
pub use transformer::{
    predict_directions, train_direction_model, DirectionModel, LengthMode, TransformerConfig,
};

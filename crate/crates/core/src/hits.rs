//! Hit-frame detection from direction-token transitions.

use serde::{Deserialize, Serialize};

use crate::direction::{DirectionSequence, DirectionToken};
use crate::error::{Error, Result};
use crate::io::{schema_v1, SCHEMA_VERSION};
use crate::rally::RallySegment;

/// Rally-local frame indices where a player strikes the shuttlecock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitFrameSet {
    pub rally_id: String,
    pub indices: Vec<usize>,
}

/// Scans the sequence with the previous direction initialized to S.
///
/// S→B and S→U (a rally start or restart) and B↔U (a return) are hits;
/// transitions into S are not. The reported index is the first frame of the
/// new direction's run.
pub fn detect_hits(s: &DirectionSequence) -> Result<HitFrameSet> {
    use DirectionToken::*;
    if let Some(i) = s.tokens.iter().position(|&t| t == Pad) {
        return Err(Error::Input(format!("rally `{}` contains Pad at position {i}", s.rally_id)));
    }
    let mut indices = Vec::new();
    let mut previous = S;
    for (frame, &direction) in s.tokens.iter().enumerate() {
        let hit = matches!((previous, direction), (S, B) | (S, U) | (B, U) | (U, B));
        if hit {
            indices.push(frame);
        }
        previous = direction;
    }
    Ok(HitFrameSet { rally_id: s.rally_id.clone(), indices })
}

/// Offsets rally-local hit indices by the segment's first frame.
pub fn to_global(hits: &HitFrameSet, segment: &RallySegment) -> Result<Vec<usize>> {
    hits.indices
        .iter()
        .map(|&i| {
            if i >= segment.len() {
                Err(Error::Range { index: i, len: segment.len() })
            } else {
                Ok(segment.start_frame + i)
            }
        })
        .collect()
}

/// Output record: `{schema_version, video_id, rally_id, hits_local, hits_global}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    pub video_id: String,
    pub rally_id: String,
    pub hits_local: Vec<usize>,
    pub hits_global: Vec<usize>,
}

impl HitRecord {
    pub fn new(video_id: impl Into<String>, hits: &HitFrameSet, segment: &RallySegment) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            video_id: video_id.into(),
            rally_id: hits.rally_id.clone(),
            hits_local: hits.indices.clone(),
            hits_global: to_global(hits, segment)?,
        })
    }
}

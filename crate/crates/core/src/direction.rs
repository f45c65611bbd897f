//! Shuttlecock direction tokens, sequences, and the KSeq record format.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlayerKeypointPair;
use crate::io::{check_schema, schema_v1, SCHEMA_VERSION};

/// Shuttlecock state per frame: steady, flying toward the bottom court,
/// flying toward the upper court, or sequence padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum DirectionToken {
    S = 0,
    B = 1,
    U = 2,
    Pad = 3,
}

pub const NUM_DIRECTION_CLASSES: usize = 4;
/// Class index excluded from loss and gradient.
pub const PAD_INDEX: usize = DirectionToken::Pad as usize;

impl DirectionToken {
    pub const REAL: [DirectionToken; 3] = [Self::S, Self::B, Self::U];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(c: usize) -> Option<Self> {
        match c {
            0 => Some(Self::S),
            1 => Some(Self::B),
            2 => Some(Self::U),
            3 => Some(Self::Pad),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::S => 'S',
            Self::B => 'B',
            Self::U => 'U',
            Self::Pad => 'P',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'S' => Some(Self::S),
            'B' => Some(Self::B),
            'U' => Some(Self::U),
            'P' => Some(Self::Pad),
            _ => None,
        }
    }
}

impl fmt::Display for DirectionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pad => f.write_str("Pad"),
            t => write!(f, "{}", t.as_char()),
        }
    }
}

pub fn directions_to_string(tokens: &[DirectionToken]) -> String {
    tokens.iter().map(|t| t.as_char()).collect()
}

pub fn directions_from_str(s: &str) -> Result<Vec<DirectionToken>> {
    s.chars()
        .enumerate()
        .map(|(i, c)| {
            DirectionToken::from_char(c)
                .ok_or_else(|| Error::Input(format!("invalid direction token {c:?} at position {i}")))
        })
        .collect()
}

/// Per-frame direction tokens of one rally. Pad tokens, if any, form a suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DirectionRecord", into = "DirectionRecord")]
pub struct DirectionSequence {
    pub rally_id: String,
    pub tokens: Vec<DirectionToken>,
    /// Provenance carried through the pipeline so hits can be mapped back to
    /// the video timeline.
    pub video_id: Option<String>,
    pub start_frame: Option<usize>,
}

impl DirectionSequence {
    pub fn new(rally_id: impl Into<String>, tokens: Vec<DirectionToken>) -> Result<Self> {
        if let Some(first_pad) = tokens.iter().position(|&t| t == DirectionToken::Pad) {
            if tokens[first_pad..].iter().any(|&t| t != DirectionToken::Pad) {
                return Err(Error::Input("Pad tokens must form a suffix".into()));
            }
        }
        Ok(Self { rally_id: rally_id.into(), tokens, video_id: None, start_frame: None })
    }

    pub fn with_origin(mut self, video_id: Option<String>, start_frame: Option<usize>) -> Self {
        self.video_id = video_id;
        self.start_frame = start_frame;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Wire form: `{schema_version, rally_id, tokens: "SBBU..", video_id?, start_frame?}`.
#[derive(Serialize, Deserialize)]
struct DirectionRecord {
    #[serde(default = "schema_v1")]
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    rally_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_frame: Option<usize>,
    tokens: String,
}

impl TryFrom<DirectionRecord> for DirectionSequence {
    type Error = Error;
    fn try_from(r: DirectionRecord) -> Result<Self> {
        check_schema(r.schema_version)?;
        Ok(DirectionSequence::new(r.rally_id, directions_from_str(&r.tokens)?)?
            .with_origin(r.video_id, r.start_frame))
    }
}

impl From<DirectionSequence> for DirectionRecord {
    fn from(s: DirectionSequence) -> Self {
        DirectionRecord {
            schema_version: SCHEMA_VERSION,
            video_id: s.video_id,
            rally_id: s.rally_id,
            start_frame: s.start_frame,
            tokens: directions_to_string(&s.tokens),
        }
    }
}

// ---------------------------------------------------------------------------
// KSeq records
// ---------------------------------------------------------------------------

/// One frame of a KSeq record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSeqFrame {
    pub pair: PlayerKeypointPair,
    /// Absent for unlabeled sequences fed to prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelToken>,
}

/// A real (non-pad) label as written in KSeq files: `"S" | "B" | "U"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelToken {
    S,
    B,
    U,
}

impl From<LabelToken> for DirectionToken {
    fn from(l: LabelToken) -> Self {
        match l {
            LabelToken::S => DirectionToken::S,
            LabelToken::B => DirectionToken::B,
            LabelToken::U => DirectionToken::U,
        }
    }
}

impl TryFrom<DirectionToken> for LabelToken {
    type Error = Error;
    fn try_from(t: DirectionToken) -> Result<Self> {
        match t {
            DirectionToken::S => Ok(LabelToken::S),
            DirectionToken::B => Ok(LabelToken::B),
            DirectionToken::U => Ok(LabelToken::U),
            DirectionToken::Pad => Err(Error::Input("Pad is not a KSeq label".into())),
        }
    }
}

/// A rally's keypoint-pair sequence, optionally with per-frame direction labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSeqRecord {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    pub rally_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_frame: Option<usize>,
    pub frames: Vec<KSeqFrame>,
}

impl KSeqRecord {
    pub fn new(
        rally_id: impl Into<String>,
        pairs: Vec<PlayerKeypointPair>,
        labels: Option<&[DirectionToken]>,
    ) -> Result<Self> {
        if let Some(l) = labels {
            if l.len() != pairs.len() {
                return Err(Error::Input(format!("{} labels for {} keypoint pairs", l.len(), pairs.len())));
            }
        }
        let frames = pairs
            .into_iter()
            .enumerate()
            .map(|(i, pair)| {
                let label = labels.map(|l| LabelToken::try_from(l[i])).transpose()?;
                Ok(KSeqFrame { pair, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            rally_id: rally_id.into(),
            video_id: None,
            start_frame: None,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pairs(&self) -> Vec<PlayerKeypointPair> {
        self.frames.iter().map(|f| f.pair).collect()
    }

    /// Labels as a direction sequence; errors if any frame is unlabeled.
    pub fn labels(&self) -> Result<DirectionSequence> {
        let tokens = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.label
                    .map(DirectionToken::from)
                    .ok_or_else(|| Error::Input(format!("rally `{}` frame {i} has no label", self.rally_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DirectionSequence::new(self.rally_id.clone(), tokens)?
            .with_origin(self.video_id.clone(), self.start_frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_match_constants() {
        assert_eq!(DirectionToken::S.code(), 0);
        assert_eq!(DirectionToken::B.code(), 1);
        assert_eq!(DirectionToken::U.code(), 2);
        assert_eq!(DirectionToken::Pad.code(), 3);
        assert_eq!(PAD_INDEX, 3);
    }

    #[test]
    fn pad_must_be_suffix() {
        use DirectionToken::*;
        assert!(DirectionSequence::new("r", vec![S, B, Pad, Pad]).is_ok());
        assert!(DirectionSequence::new("r", vec![S, Pad, B]).is_err());
    }

    #[test]
    fn direction_record_wire() {
        let s = DirectionSequence::new("v/r0001", directions_from_str("SBBU").unwrap()).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"schema_version":1,"rally_id":"v/r0001","tokens":"SBBU"}"#);
        assert_eq!(serde_json::from_str::<DirectionSequence>(&j).unwrap(), s);
    }

    #[test]
    fn kseq_label_wire() {
        let j = r#"{"rally_id":"x","frames":[{"pair":[[[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]]],"label":"B"}]}"#;
        let r: KSeqRecord = serde_json::from_str(j).unwrap();
        assert_eq!(r.labels().unwrap().tokens, vec![DirectionToken::B]);
        assert!(serde_json::from_str::<KSeqRecord>(&j.replace("\"B\"", "\"Pad\"")).is_err());
    }
}

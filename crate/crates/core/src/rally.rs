//! Rally trimming from per-frame shot-angle tokens.
//!
//! Broadcast footage switches to the overhead ("high") camera while a rally
//! is in play. A rally starts on an Other→High transition and ends on the
//! following High→Other transition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ShotAngleToken {
    Other = 0,
    High = 1,
}

impl ShotAngleToken {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: usize) -> Option<Self> {
        match c {
            0 => Some(Self::Other),
            1 => Some(Self::High),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::Other => 'O',
            Self::High => 'H',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'O' => Some(Self::Other),
            'H' => Some(Self::High),
            _ => None,
        }
    }
}

/// Encodes tokens as an `O`/`H` string.
pub fn tokens_to_string(tokens: &[ShotAngleToken]) -> String {
    tokens.iter().map(|t| t.as_char()).collect()
}

pub fn tokens_from_str(s: &str) -> Result<Vec<ShotAngleToken>> {
    s.chars()
        .enumerate()
        .map(|(i, c)| {
            ShotAngleToken::from_char(c)
                .ok_or_else(|| Error::Input(format!("invalid shot-angle token {c:?} at frame {i}")))
        })
        .collect()
}

/// Per-frame shot-angle classification of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AngleStreamRecord", into = "AngleStreamRecord")]
pub struct AngleStream {
    pub video_id: String,
    pub fps: f64,
    pub tokens: Vec<ShotAngleToken>,
}

/// Wire form: `{schema_version, video_id, fps, tokens: "OOHHHO..."}`.
#[derive(Serialize, Deserialize)]
struct AngleStreamRecord {
    #[serde(default = "crate::io::schema_v1")]
    schema_version: u32,
    video_id: String,
    fps: f64,
    tokens: String,
}

impl TryFrom<AngleStreamRecord> for AngleStream {
    type Error = Error;
    fn try_from(r: AngleStreamRecord) -> Result<Self> {
        crate::io::check_schema(r.schema_version)?;
        AngleStream::new(r.video_id, r.fps, tokens_from_str(&r.tokens)?)
    }
}

impl From<AngleStream> for AngleStreamRecord {
    fn from(s: AngleStream) -> Self {
        AngleStreamRecord {
            schema_version: crate::io::SCHEMA_VERSION,
            video_id: s.video_id,
            fps: s.fps,
            tokens: tokens_to_string(&s.tokens),
        }
    }
}

impl AngleStream {
    pub fn new(video_id: impl Into<String>, fps: f64, tokens: Vec<ShotAngleToken>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Input(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { video_id: video_id.into(), fps, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Inclusive frame span of one rally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct RallySegment {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl RallySegment {
    pub fn new(start_frame: usize, end_frame: usize) -> Result<Self> {
        if start_frame > end_frame {
            return Err(Error::Input(format!("segment start {start_frame} after end {end_frame}")));
        }
        Ok(Self { start_frame, end_frame })
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start_frame..=self.end_frame
    }
}

impl TryFrom<[usize; 2]> for RallySegment {
    type Error = Error;
    fn try_from(v: [usize; 2]) -> Result<Self> {
        RallySegment::new(v[0], v[1])
    }
}

impl From<RallySegment> for [usize; 2] {
    fn from(s: RallySegment) -> Self {
        [s.start_frame, s.end_frame]
    }
}

impl fmt::Display for RallySegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start_frame, self.end_frame)
    }
}

/// Runs the Other/High state machine over the stream.
///
/// The previous angle starts as Other. A rally still open when the stream
/// ends is closed at the last frame.
pub fn segment_rallies(stream: &AngleStream) -> Result<Vec<RallySegment>> {
    use ShotAngleToken::*;
    if stream.tokens.is_empty() {
        return Err(Error::EmptyInput(format!("angle stream `{}` has no frames", stream.video_id)));
    }
    let mut segments = Vec::new();
    let mut previous = Other;
    let mut start = 0;
    for (frame, &angle) in stream.tokens.iter().enumerate() {
        if angle != previous {
            match angle {
                High => start = frame,
                Other => segments.push(RallySegment { start_frame: start, end_frame: frame - 1 }),
            }
        }
        previous = angle;
    }
    if previous == High {
        segments.push(RallySegment { start_frame: start, end_frame: stream.tokens.len() - 1 });
    }
    Ok(segments)
}

/// Replaces every run shorter than `min_run` (other than the first) with the
/// token of the run before it. `min_run = 1` is the identity.
pub fn smooth_stream(stream: &AngleStream, min_run: usize) -> Result<AngleStream> {
    if min_run == 0 {
        return Err(Error::Config("min_run must be at least 1".into()));
    }
    let mut tokens: Vec<ShotAngleToken> = Vec::with_capacity(stream.tokens.len());
    let mut i = 0;
    while i < stream.tokens.len() {
        let t = stream.tokens[i];
        let mut j = i;
        while j < stream.tokens.len() && stream.tokens[j] == t {
            j += 1;
        }
        let fill = match tokens.last() {
            Some(&prev) if j - i < min_run => prev,
            _ => t,
        };
        tokens.extend(std::iter::repeat_n(fill, j - i));
        i = j;
    }
    Ok(AngleStream { video_id: stream.video_id.clone(), fps: stream.fps, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(s: &str) -> AngleStream {
        AngleStream::new("v", 30.0, tokens_from_str(s).unwrap()).unwrap()
    }

    fn seg(s: &str) -> Vec<(usize, usize)> {
        segment_rallies(&stream(s)).unwrap().into_iter().map(|r| (r.start_frame, r.end_frame)).collect()
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(seg("OOHHHOO"), vec![(2, 4)]);
        assert_eq!(seg("OOO"), vec![]);
        assert_eq!(seg("HHOH"), vec![(0, 1), (3, 3)]);
        assert_eq!(seg("H"), vec![(0, 0)]);
    }

    #[test]
    fn empty_stream_errors() {
        let s = AngleStream::new("v", 30.0, vec![]).unwrap();
        assert!(matches!(segment_rallies(&s), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn smoothing_examples() {
        let s = smooth_stream(&stream("HHOHH"), 2).unwrap();
        assert_eq!(tokens_to_string(&s.tokens), "HHHHH");
        let s = smooth_stream(&stream("OOHOO"), 2).unwrap();
        assert_eq!(tokens_to_string(&s.tokens), "OOOOO");
        // The first run is never altered.
        let s = smooth_stream(&stream("HOOO"), 3).unwrap();
        assert_eq!(tokens_to_string(&s.tokens), "HOOO");
        assert!(smooth_stream(&stream("HO"), 0).is_err());
    }

    #[test]
    fn smoothing_identity_at_one() {
        let s = stream("OHOHHOOOHO");
        assert_eq!(smooth_stream(&s, 1).unwrap(), s);
    }

    #[test]
    fn wire_format() {
        let s = stream("OOHH");
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"schema_version":1,"video_id":"v","fps":30.0,"tokens":"OOHH"}"#);
        assert_eq!(serde_json::from_str::<AngleStream>(&j).unwrap(), s);
        assert!(serde_json::from_str::<AngleStream>(r#"{"video_id":"v","fps":30,"tokens":"OX"}"#).is_err());
        assert!(serde_json::from_str::<AngleStream>(r#"{"video_id":"v","fps":0,"tokens":"O"}"#).is_err());
    }

    #[test]
    fn codes_match_constants() {
        assert_eq!(ShotAngleToken::Other.code(), 0);
        assert_eq!(ShotAngleToken::High.code(), 1);
    }
}

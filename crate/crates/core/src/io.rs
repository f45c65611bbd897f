//! JSON-lines persistence and the record types shared between stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CourtKeypoints, SkeletonKeypoints};
use crate::rally::RallySegment;

/// Version stamped on every record this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn schema_v1() -> u32 {
    SCHEMA_VERSION
}

pub(crate) fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Input(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})")));
    }
    Ok(())
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Creates (or truncates) a file, making missing parent directories first.
pub fn create_file(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| with_path(dir, e))?;
    }
    File::create(path).map_err(|e| with_path(path, e))
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| with_path(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = BufWriter::new(create_file(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create_file(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Raw pose-detector output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrameRecord {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    pub video_id: String,
    pub frame: usize,
    pub instances: Vec<SkeletonKeypoints>,
    /// Omitted when the court is unchanged since the last record that carried one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub court: Option<CourtKeypoints>,
}

/// Rally segments of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentsRecord {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    pub video_id: String,
    pub rallies: Vec<RallySegment>,
}

impl SegmentsRecord {
    pub fn new(video_id: impl Into<String>, rallies: Vec<RallySegment>) -> Self {
        Self { schema_version: SCHEMA_VERSION, video_id: video_id.into(), rallies }
    }
}

/// Canonical rally identifier: `<video_id>/r<index>`.
pub fn rally_id(video_id: &str, index: usize) -> String {
    format!("{video_id}/r{index:04}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let recs = vec![
            SegmentsRecord::new("a", vec![RallySegment::new(1, 4).unwrap()]),
            SegmentsRecord::new("b", vec![]),
        ];
        write_jsonl(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"schema_version":1,"video_id":"a","rallies":[[1,4]]}"#);
        assert_eq!(read_jsonl::<SegmentsRecord>(&p).unwrap(), recs);

        std::fs::write(&p, "{\"video_id\":\"a\",\"rallies\":[]}\n\nnot json\n").unwrap();
        let err = read_jsonl::<SegmentsRecord>(&p).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn rejects_reversed_segment() {
        assert!(serde_json::from_str::<SegmentsRecord>(r#"{"video_id":"a","rallies":[[5,1]]}"#).is_err());
    }
}

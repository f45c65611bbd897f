//! JSON checkpoint envelope shared by both trainable models.
//!
//! Layout (`schema_version` 1):
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "kind": "sacnn" | "direction_transformer",
//!   "config": { model-specific },
//!   "params": { "layers": { "<layer>": { "weight": {"shape": [..], "values": [..]},
//!                                        "bias":   {"shape": [..], "values": [..]} } } },
//!   "running_stats": { "<layer>": { "mean": [..], "var": [..] } },
//!   "optimizer": { "moments": { "<layer>.weight": {"m": tensor, "v": tensor}, .. }, "step": n } | null,
//!   "keypoint_stats": { "mean": [34], "std": [34] } | null,
//!   "history": [ { "epoch": e, "lr": .., "loss": .. }, .. ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so identical models give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::KeypointStats;
use crate::nn::layers::RunningStats;
use crate::nn::optim::AdamState;
use crate::nn::params::ParameterSet;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub schema_version: u32,
    pub kind: String,
    pub config: C,
    pub params: ParameterSet,
    #[serde(default)]
    pub running_stats: BTreeMap<String, RunningStats>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub keypoint_stats: Option<KeypointStats>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

impl<C: Serialize + DeserializeOwned> Checkpoint<C> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(crate::io::create_file(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let ck: Self = serde_json::from_reader(r)?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        if ck.kind != kind {
            return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", ck.kind)));
        }
        if let Some((name, _)) = ck.params.tensors().find(|(_, t)| t.values().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Checkpoint(format!("non-finite values in `{name}`")));
        }
        Ok(ck)
    }
}

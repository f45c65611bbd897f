//! End-to-end run driven by a TOML configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hitframe::eval::trimming_report;
use hitframe::io::{write_json, write_jsonl, SegmentsRecord, SCHEMA_VERSION};
use hitframe::transformer::predict_directions;
use hitframe::{
    AngleStream, DirectionModel, DirectionSequence, HitRecord, KSeqRecord, LengthMode, TrimmingReport,
};
use serde::{Deserialize, Serialize};

use crate::report::{pooled_hit_reports, AngleReport, Format, Report};
use crate::stages::{self, FilterOptions, MissingInput, Profile};

pub const DEFAULT_TOLERANCES: [usize; 3] = [5, 15, 25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Shortest run kept when smoothing angle streams; 1 disables smoothing.
    #[serde(default = "one")]
    pub min_run: usize,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "yes")]
    pub hold_last: bool,
    #[serde(default)]
    pub length_mode: LengthMode,
    #[serde(default = "default_tolerances")]
    pub tolerances: Vec<usize>,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Restricts the run to these videos; empty means all.
    #[serde(default)]
    pub videos: Vec<String>,
    pub inputs: Inputs,
    #[serde(default)]
    pub train_angle: Option<TrainAngleStage>,
    #[serde(default)]
    pub train_direction: Option<TrainDirectionStage>,
}

/// Input locations. Relative paths are resolved against the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub keypoints: PathBuf,
    /// Precomputed per-frame shot angles; replaces classification.
    #[serde(default)]
    pub angles: Option<PathBuf>,
    /// Frames of a single video (PNG directory or frame-stack file).
    #[serde(default)]
    pub frames: Option<PathBuf>,
    #[serde(default)]
    pub video_id: Option<String>,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub angle_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub direction_checkpoint: Option<PathBuf>,
    /// Known direction sequences used in place of the direction model.
    #[serde(default)]
    pub oracle_directions: Option<PathBuf>,
    #[serde(default)]
    pub gold_angles: Option<PathBuf>,
    #[serde(default)]
    pub gold_segments: Option<PathBuf>,
    #[serde(default)]
    pub gold_directions: Option<PathBuf>,
    #[serde(default)]
    pub gold_hits: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAngleStage {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDirectionStage {
    pub kseq: PathBuf,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub epochs: Option<usize>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_tolerances() -> Vec<usize> {
    DEFAULT_TOLERANCES.to_vec()
}
fn default_iou() -> f64 {
    0.5
}
fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Table]
}
fn default_fps() -> f64 {
    30.0
}

impl PipelineConfig {
    /// Parses a config file and resolves its relative paths.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(stages::require(path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let i = &mut self.inputs;
        fix(&mut i.keypoints);
        for p in [
            &mut i.angles,
            &mut i.frames,
            &mut i.angle_checkpoint,
            &mut i.direction_checkpoint,
            &mut i.oracle_directions,
            &mut i.gold_angles,
            &mut i.gold_segments,
            &mut i.gold_directions,
            &mut i.gold_hits,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(t) = &mut self.train_angle {
            fix(&mut t.images);
            fix(&mut t.labels);
        }
        if let Some(t) = &mut self.train_direction {
            fix(&mut t.kseq);
        }
    }

    /// Checks that every referenced input exists and that each stage has a
    /// source.
    pub fn validate(&self) -> anyhow::Result<()> {
        let i = &self.inputs;
        let mut paths = vec![&i.keypoints];
        paths.extend(
            [
                &i.angles,
                &i.frames,
                &i.angle_checkpoint,
                &i.direction_checkpoint,
                &i.oracle_directions,
                &i.gold_angles,
                &i.gold_segments,
                &i.gold_directions,
                &i.gold_hits,
            ]
            .into_iter()
            .flatten(),
        );
        if let Some(t) = &self.train_angle {
            paths.extend([&t.images, &t.labels]);
        }
        if let Some(t) = &self.train_direction {
            paths.push(&t.kseq);
        }
        for p in paths {
            stages::require(p)?;
        }
        if i.angles.is_none() {
            if i.frames.is_none() {
                return Err(MissingInput("inputs.angles or inputs.frames".into()).into());
            }
            if i.video_id.is_none() {
                return Err(MissingInput("inputs.video_id (needed with inputs.frames)".into()).into());
            }
            if i.angle_checkpoint.is_none() && self.train_angle.is_none() {
                return Err(MissingInput("inputs.angle_checkpoint or [train_angle]".into()).into());
            }
        }
        if i.oracle_directions.is_none() && i.direction_checkpoint.is_none() && self.train_direction.is_none()
        {
            return Err(MissingInput(
                "inputs.direction_checkpoint, inputs.oracle_directions or [train_direction]".into(),
            )
            .into());
        }
        if self.tolerances.is_empty() || self.tolerances.contains(&0) {
            bail!("tolerances must be non-empty and at least 1 frame");
        }
        if self.min_run == 0 {
            bail!("min_run must be at least 1");
        }
        Ok(())
    }
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: Report,
    pub hits: Vec<HitRecord>,
    /// Written files, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
struct Failure<'a> {
    schema_version: u32,
    stage: &'a str,
    error: String,
    outputs: &'a [String],
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

impl Run<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> anyhow::Result<()> {
        write_jsonl(&self.out(name), items)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> anyhow::Result<T>) -> anyhow::Result<T> {
        f(self).map_err(|e| {
            let failure = Failure {
                schema_version: SCHEMA_VERSION,
                stage: name,
                error: format!("{e:#}"),
                outputs: &self.outputs,
            };
            // The stage error is what matters; a failed write only adds to it.
            let written = write_json(&self.out("failure.json"), &failure);
            let e = e.context(format!("stage `{name}` failed"));
            match written {
                Ok(()) => e,
                Err(w) => e.context(format!("could not write failure.json: {w}")),
            }
        })
    }
}

/// Direction sequences from either bare sequences or labeled keypoint records.
pub fn load_direction_sequences(path: &Path) -> anyhow::Result<Vec<DirectionSequence>> {
    let values: Vec<serde_json::Value> = stages::read_records(path)?;
    values
        .into_iter()
        .map(|v| {
            if v.get("frames").is_some() {
                let r: KSeqRecord = serde_json::from_value(v)?;
                Ok(r.labels()?)
            } else {
                Ok(serde_json::from_value(v)?)
            }
        })
        .collect()
}

/// Lookup of sequences by where they sit in a video, then by rally id.
struct SequenceIndex {
    by_origin: BTreeMap<(String, usize), DirectionSequence>,
    by_id: BTreeMap<String, DirectionSequence>,
}

impl SequenceIndex {
    fn new(seqs: Vec<DirectionSequence>) -> Self {
        let mut by_origin = BTreeMap::new();
        let mut by_id = BTreeMap::new();
        for s in seqs {
            if let (Some(v), Some(f)) = (&s.video_id, s.start_frame) {
                by_origin.insert((v.clone(), f), s.clone());
            }
            by_id.insert(s.rally_id.clone(), s);
        }
        Self { by_origin, by_id }
    }

    fn find(&self, r: &KSeqRecord) -> Option<&DirectionSequence> {
        let origin = r.video_id.clone().zip(r.start_frame);
        origin
            .and_then(|o| self.by_origin.get(&o))
            .or_else(|| self.by_id.get(&r.rally_id))
            .filter(|s| s.len() == r.len())
    }
}

fn wanted(cfg: &PipelineConfig, video: &str) -> bool {
    cfg.videos.is_empty() || cfg.videos.iter().any(|v| v == video)
}

/// Runs every stage. On a stage failure `failure.json` records the stage,
/// the error and the files written so far.
pub fn run_pipeline(cfg: &PipelineConfig) -> anyhow::Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let _ = std::fs::remove_file(cfg.output_dir.join("failure.json"));
    let mut run = Run { cfg, outputs: Vec::new(), warnings: Vec::new() };
    let inputs = &cfg.inputs;

    let angle_model = run.stage("train-angle", |run| {
        let Some(t) = &cfg.train_angle else {
            return Ok(None);
        };
        std::fs::create_dir_all(run.out("checkpoints"))?;
        let ck = stages::train_angle(&t.images, &t.labels, t.profile, t.epochs, cfg.seed)?;
        ck.save(&run.out("checkpoints/angle.json"))?;
        run.outputs.push("checkpoints/angle.json".into());
        Ok(Some(hitframe::SaCnn::from_checkpoint(ck)?))
    })?;

    let direction_model: Option<DirectionModel> = run.stage("train-direction", |run| {
        if inputs.oracle_directions.is_some() {
            return Ok(None);
        }
        if let Some(t) = &cfg.train_direction {
            let records: Vec<KSeqRecord> = stages::read_records(&t.kseq)?;
            std::fs::create_dir_all(run.out("checkpoints"))?;
            let ck = stages::train_direction(&records, t.profile, t.epochs, cfg.seed, cfg.length_mode)?;
            ck.save(&run.out("checkpoints/direction.json"))?;
            run.outputs.push("checkpoints/direction.json".into());
            return Ok(Some(DirectionModel::from_checkpoint(ck)?));
        }
        let path = inputs.direction_checkpoint.as_ref().expect("validated");
        Ok(Some(stages::load_direction_model(path)?))
    })?;

    let streams: Vec<AngleStream> = run.stage("classify", |run| {
        let streams = match &inputs.angles {
            Some(p) => {
                let all: Vec<AngleStream> = stages::read_records(p)?;
                all.into_iter().filter(|s| wanted(cfg, &s.video_id)).collect()
            }
            None => {
                let model = match angle_model {
                    Some(m) => m,
                    None => stages::load_angle_model(inputs.angle_checkpoint.as_ref().expect("validated"))?,
                };
                let video = inputs.video_id.as_deref().expect("validated");
                vec![stages::classify(&model, inputs.frames.as_ref().expect("validated"), video, inputs.fps)?]
            }
        };
        let ids: BTreeSet<&str> = streams.iter().map(|s| s.video_id.as_str()).collect();
        if ids.len() != streams.len() {
            bail!("angle input holds more than one stream for a video");
        }
        if streams.is_empty() {
            bail!("no angle streams selected");
        }
        run.jsonl("angles.jsonl", &streams)?;
        Ok(streams)
    })?;

    let segments: Vec<SegmentsRecord> = run.stage("segment", |run| {
        let segs =
            streams.iter().map(|s| stages::segment(s, cfg.min_run)).collect::<anyhow::Result<Vec<_>>>()?;
        run.jsonl("segments.jsonl", &segs)?;
        Ok(segs)
    })?;

    let kseq: Vec<KSeqRecord> = run.stage("filter", |run| {
        let kp = stages::index_keypoints(stages::read_records(&inputs.keypoints)?);
        let opts = FilterOptions { strict: cfg.strict, hold_last: cfg.hold_last };
        let mut out = Vec::new();
        for seg in &segments {
            let Some(video) = kp.get(&seg.video_id) else {
                return Err(MissingInput(format!("keypoints for video {}", seg.video_id)).into());
            };
            for (k, r) in seg.rallies.iter().enumerate() {
                match stages::filter_rally(&seg.video_id, k, r, video, opts) {
                    Ok(f) => {
                        if !f.substituted.is_empty() {
                            run.warnings.push(format!(
                                "{}: {} frame(s) reused the previous player pair",
                                f.record.rally_id,
                                f.substituted.len()
                            ));
                        }
                        out.push(f.record);
                    }
                    Err(e) if !cfg.strict && !e.chain().any(|c| c.is::<MissingInput>()) => {
                        run.warnings.push(format!("skipped rally: {e:#}"));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        run.jsonl("kseq.jsonl", &out)?;
        Ok(out)
    })?;

    let directions: Vec<DirectionSequence> = run.stage("predict", |run| {
        let mut out = Vec::with_capacity(kseq.len());
        if let Some(p) = &inputs.oracle_directions {
            let index = SequenceIndex::new(load_direction_sequences(p)?);
            for r in &kseq {
                match index.find(r) {
                    Some(s) => out.push(
                        DirectionSequence::new(r.rally_id.clone(), s.tokens.clone())?
                            .with_origin(r.video_id.clone(), r.start_frame),
                    ),
                    None if cfg.strict => {
                        bail!("rally {}: no oracle sequence of matching length", r.rally_id)
                    }
                    None => {
                        run.warnings.push(format!("{}: no oracle sequence of matching length", r.rally_id))
                    }
                }
            }
        } else {
            let model = direction_model.as_ref().expect("model or oracle");
            for r in &kseq {
                out.push(
                    predict_directions(model, r, cfg.length_mode)
                        .with_context(|| format!("rally {}", r.rally_id))?,
                );
            }
        }
        run.jsonl("directions.jsonl", &out)?;
        Ok(out)
    })?;

    let hits: Vec<HitRecord> = run.stage("detect", |run| {
        let hits = directions.iter().map(stages::hits_for).collect::<anyhow::Result<Vec<_>>>()?;
        run.jsonl("hits.jsonl", &hits)?;
        Ok(hits)
    })?;

    let report = run.stage("report", |run| {
        let mut report = Report::new();
        report.videos = streams.iter().map(|s| s.video_id.clone()).collect();
        report.rallies = Some(kseq.len());

        if let Some(p) = &inputs.gold_angles {
            let gold: BTreeMap<String, AngleStream> = stages::read_records::<AngleStream>(p)?
                .into_iter()
                .map(|s| (s.video_id.clone(), s))
                .collect();
            let (mut pred, mut want) = (Vec::new(), Vec::new());
            for s in &streams {
                let g =
                    gold.get(&s.video_id).with_context(|| format!("no gold angles for {}", s.video_id))?;
                pred.extend(&s.tokens);
                want.extend(&g.tokens);
                if s.len() != g.len() {
                    bail!("video {}: {} predicted angles, {} gold", s.video_id, s.len(), g.len());
                }
            }
            report.angles = Some(AngleReport::new(&pred, &want)?);
        }

        if let Some(p) = &inputs.gold_segments {
            let gold: BTreeMap<String, SegmentsRecord> = stages::read_records::<SegmentsRecord>(p)?
                .into_iter()
                .map(|s| (s.video_id.clone(), s))
                .collect();
            let (mut correct, mut extra, mut missed) = (0, 0, 0);
            for s in &segments {
                let actual = gold.get(&s.video_id).map_or(&[][..], |g| &g.rallies[..]);
                let r = trimming_report(&s.rallies, actual, cfg.iou_threshold)?;
                correct += r.correct;
                extra += r.extra;
                missed += r.missed;
            }
            report.trimming = Some(TrimmingReport::from_counts(correct, extra, missed)?);
        }

        if let Some(p) = &inputs.gold_directions {
            let gold = SequenceIndex::new(load_direction_sequences(p)?);
            let mut pairs = Vec::new();
            for (d, r) in directions.iter().zip(&kseq) {
                match gold.find(r) {
                    Some(g) => pairs.push((d, g)),
                    None => run.warnings.push(format!("{}: no gold directions", d.rally_id)),
                }
            }
            report.tokens = Some(hitframe::eval::token_report_many(pairs)?);
        }

        if let Some(p) = &inputs.gold_hits {
            let mut per_video: BTreeMap<String, (Vec<usize>, Vec<usize>, usize)> =
                streams.iter().map(|s| (s.video_id.clone(), (Vec::new(), Vec::new(), s.len()))).collect();
            for h in &hits {
                if let Some(v) = per_video.get_mut(&h.video_id) {
                    v.0.extend(&h.hits_global);
                }
            }
            for h in stages::read_records::<HitRecord>(p)? {
                if let Some(v) = per_video.get_mut(&h.video_id) {
                    v.1.extend(&h.hits_global);
                }
            }
            report.hits = pooled_hit_reports(&per_video, &cfg.tolerances)?;
        }

        report.warnings = std::mem::take(&mut run.warnings);
        write_json(&run.out("report.json"), &report)?;
        run.outputs.push("report.json".into());
        for (fmt, name) in [(Format::Table, "report.txt"), (Format::Csv, "report.csv")] {
            if cfg.formats.contains(&fmt) {
                std::fs::write(run.out(name), report.render(fmt)?)?;
                run.outputs.push(name.into());
            }
        }
        Ok(report)
    })?;

    Ok(PipelineOutcome { report, hits, outputs: run.outputs })
}

//! Command-line front end: one subcommand per stage plus a config-driven
//! `pipeline` that chains them.

pub mod pipeline;
pub mod report;
pub mod stages;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hitframe::io::{write_json, write_jsonl, SegmentsRecord};
use hitframe::synth::SynthConfig;
use hitframe::transformer::predict_directions;
use hitframe::{AngleStream, HitRecord, KSeqRecord, LengthMode, TrimmingReport};

use crate::pipeline::{load_direction_sequences, PipelineConfig, DEFAULT_TOLERANCES};
use crate::report::{pooled_hit_reports, AngleReport, Format, Report};
use crate::stages::{FilterOptions, MissingInput, Profile};

/// Exit status for a stage or evaluation failure.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status when a required input is missing.
pub const EXIT_MISSING_INPUT: u8 = 2;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<MissingInput>()) {
        EXIT_MISSING_INPUT
    } else {
        EXIT_FAILURE
    }
}

#[derive(Debug, Parser)]
#[command(name = "hitframe", version, about = "Hit-frame detection for badminton video")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration (pipeline, or synth parameters for `synth`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shortest angle run kept before segmentation.
    #[arg(long, global = true)]
    pub min_run: Option<usize>,
    /// Abort on the first frame without two players on court.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Hit tolerance in frames; repeat for several.
    #[arg(long = "tol", global = true)]
    pub tolerances: Vec<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Hits,
    Trim,
    Tokens,
    Angles,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rallies: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Skip frame and image files.
        #[arg(long)]
        no_images: bool,
    },
    /// Train the shot-angle classifier.
    TrainAngle {
        /// Frame-stack file or PNG directory.
        #[arg(long)]
        images: PathBuf,
        /// Angle stream(s) labeling the images in order.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classify every frame of a video.
    Classify {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video_id: String,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trim rallies from angle streams.
    Segment {
        #[arg(long)]
        angles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the two players per frame of every rally.
    Filter {
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail on bad frames instead of reusing the previous pair.
        #[arg(long)]
        no_hold_last: bool,
    },
    /// Train the direction model on labeled keypoint sequences.
    TrainDirection {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long)]
        epochs: Option<usize>,
        /// Split long sequences into windows instead of rejecting them.
        #[arg(long)]
        chunk: bool,
    },
    /// Predict per-frame directions.
    Predict {
        #[arg(long)]
        kseq: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk: bool,
    },
    /// Turn direction sequences into hit frames.
    Detect {
        #[arg(long)]
        directions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold data.
    Eval {
        #[arg(long, value_enum)]
        kind: EvalKind,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Angle streams giving each video's frame count (hits only).
        #[arg(long)]
        angles: Option<PathBuf>,
        /// Frame count used for every video when no angle streams are given.
        #[arg(long)]
        total_frames: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only score these videos; repeat for several. Default: all.
        #[arg(long = "video")]
        videos: Vec<String>,
    },
    /// Run the configured stages end to end.
    Pipeline,
    /// Render a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

/// Executes a parsed command, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or(0);
    let tolerances = if g.tolerances.is_empty() { DEFAULT_TOLERANCES.to_vec() } else { g.tolerances.clone() };
    let format = g.format.unwrap_or(Format::Table);
    match cli.command {
        Command::Synth { out, rallies, noise, no_images } => {
            let mut cfg = match &g.config {
                Some(p) => toml::from_str(
                    &std::fs::read_to_string(stages::require(p)?)
                        .with_context(|| format!("reading {}", p.display()))?,
                )
                .with_context(|| format!("parsing {}", p.display()))?,
                None => SynthConfig::default(),
            };
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(n) = rallies {
                cfg.rallies = n;
            }
            if let Some(n) = noise {
                cfg.noise_std = n;
            }
            if no_images {
                cfg.write_images = false;
            }
            let summary = hitframe::generate_dataset(&cfg, &out)?;
            match format {
                Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?)?,
                _ => write!(stdout, "{}", summary.render_table())?,
            }
        }
        Command::TrainAngle { images, labels, out, profile, epochs } => {
            let ck = stages::train_angle(&images, &labels, profile, epochs, seed)?;
            ck.save(&out)?;
            writeln!(stdout, "shot-angle model: {}", stages::loss_summary(&ck.history))?;
        }
        Command::Classify { frames, checkpoint, video_id, fps, out } => {
            let model = stages::load_angle_model(&checkpoint)?;
            let stream = stages::classify(&model, &frames, &video_id, fps)?;
            let high = stream.tokens.iter().filter(|&&t| t == hitframe::ShotAngleToken::High).count();
            write_jsonl(&out, [&stream])?;
            writeln!(stdout, "{video_id}: {} frames, {high} high", stream.len())?;
        }
        Command::Segment { angles, out } => {
            let streams: Vec<AngleStream> = stages::read_records(&angles)?;
            let min_run = g.min_run.unwrap_or(1);
            let segs =
                streams.iter().map(|s| stages::segment(s, min_run)).collect::<anyhow::Result<Vec<_>>>()?;
            write_jsonl(&out, &segs)?;
            for s in &segs {
                writeln!(stdout, "{}: {} rallies", s.video_id, s.rallies.len())?;
            }
        }
        Command::Filter { keypoints, segments, out, no_hold_last } => {
            let kp = stages::index_keypoints(stages::read_records(&keypoints)?);
            let segs: Vec<SegmentsRecord> = stages::read_records(&segments)?;
            let opts = FilterOptions { strict: g.strict, hold_last: !no_hold_last };
            let mut records = Vec::new();
            for s in &segs {
                let video = kp
                    .get(&s.video_id)
                    .ok_or_else(|| MissingInput(format!("keypoints for video {}", s.video_id)))?;
                for (k, r) in s.rallies.iter().enumerate() {
                    let f = stages::filter_rally(&s.video_id, k, r, video, opts)?;
                    if !f.substituted.is_empty() {
                        writeln!(
                            stdout,
                            "{}: reused previous pair at {} frame(s)",
                            f.record.rally_id,
                            f.substituted.len()
                        )?;
                    }
                    records.push(f.record);
                }
            }
            write_jsonl(&out, &records)?;
            writeln!(stdout, "{} rallies filtered", records.len())?;
        }
        Command::TrainDirection { train, out, profile, epochs, chunk } => {
            let records: Vec<KSeqRecord> = stages::read_records(&train)?;
            let ck = stages::train_direction(&records, profile, epochs, seed, length_mode(chunk))?;
            ck.save(&out)?;
            writeln!(stdout, "direction model: {}", stages::loss_summary(&ck.history))?;
        }
        Command::Predict { kseq, checkpoint, out, chunk } => {
            let model = stages::load_direction_model(&checkpoint)?;
            let records: Vec<KSeqRecord> = stages::read_records(&kseq)?;
            let seqs = records
                .iter()
                .map(|r| {
                    predict_directions(&model, r, length_mode(chunk))
                        .with_context(|| format!("rally {}", r.rally_id))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_jsonl(&out, &seqs)?;
            writeln!(stdout, "{} sequences predicted", seqs.len())?;
        }
        Command::Detect { directions, out } => {
            let seqs = load_direction_sequences(&directions)?;
            let hits = seqs.iter().map(stages::hits_for).collect::<anyhow::Result<Vec<_>>>()?;
            write_jsonl(&out, &hits)?;
            let n: usize = hits.iter().map(|h| h.hits_local.len()).sum();
            writeln!(stdout, "{n} hits in {} rallies", hits.len())?;
        }
        Command::Eval { kind, pred, gold, angles, total_frames, iou, out, videos } => {
            let sources =
                EvalSources { pred: &pred, gold: &gold, angles: angles.as_deref(), videos: &videos };
            let report = evaluate(kind, &sources, total_frames, iou, &tolerances)?;
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            write!(stdout, "{}", report.render(format)?)?;
        }
        Command::Pipeline => {
            let path = g.config.as_ref().ok_or_else(|| MissingInput("--config for pipeline".into()))?;
            let mut cfg = PipelineConfig::load(path)?;
            apply_overrides(&mut cfg, g);
            let outcome = pipeline::run_pipeline(&cfg)?;
            write!(stdout, "{}", outcome.report.render(g.format.unwrap_or(Format::Table))?)?;
        }
        Command::Report { input } => {
            let report: Report = hitframe::io::read_json(stages::require(&input)?)
                .with_context(|| format!("reading {}", input.display()))?;
            write!(stdout, "{}", report.render(format)?)?;
        }
    }
    Ok(())
}

fn length_mode(chunk: bool) -> LengthMode {
    if chunk {
        LengthMode::Chunk
    } else {
        LengthMode::Strict
    }
}

/// Command-line flags take precedence over the config file.
pub fn apply_overrides(cfg: &mut PipelineConfig, g: &Global) {
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.min_run {
        cfg.min_run = m;
    }
    if g.strict {
        cfg.strict = true;
    }
    if !g.tolerances.is_empty() {
        cfg.tolerances = g.tolerances.clone();
    }
}

fn by_video<T>(items: Vec<T>, key: impl Fn(&T) -> &str) -> anyhow::Result<BTreeMap<String, T>> {
    let mut out = BTreeMap::new();
    for it in items {
        let k = key(&it).to_string();
        if out.insert(k.clone(), it).is_some() {
            bail!("video {k} appears more than once");
        }
    }
    Ok(out)
}

/// Files compared by `eval`, and the videos to keep from them.
pub struct EvalSources<'a> {
    pub pred: &'a Path,
    pub gold: &'a Path,
    /// Angle streams giving each video's frame count (hits only).
    pub angles: Option<&'a Path>,
    /// Empty keeps every video.
    pub videos: &'a [String],
}

impl EvalSources<'_> {
    fn keeps(&self, video: &str) -> bool {
        self.videos.is_empty() || self.videos.iter().any(|v| v == video)
    }

    fn read<T: serde::de::DeserializeOwned>(
        &self,
        path: &Path,
        video: impl Fn(&T) -> &str,
    ) -> anyhow::Result<Vec<T>> {
        Ok(stages::read_records::<T>(path)?.into_iter().filter(|r| self.keeps(video(r))).collect())
    }
}

pub fn evaluate(
    kind: EvalKind,
    src: &EvalSources,
    total_frames: Option<usize>,
    iou: f64,
    tolerances: &[usize],
) -> anyhow::Result<Report> {
    let (pred, gold, angles) = (src.pred, src.gold, src.angles);
    let mut report = Report::new();
    match kind {
        EvalKind::Angles => {
            let p = by_video(src.read::<AngleStream>(pred, |s| &s.video_id)?, |s| &s.video_id)?;
            let g = by_video(src.read::<AngleStream>(gold, |s| &s.video_id)?, |s| &s.video_id)?;
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (v, s) in &p {
                let gs = g.get(v).with_context(|| format!("no gold angles for {v}"))?;
                if s.len() != gs.len() {
                    bail!("video {v}: {} predicted angles, {} gold", s.len(), gs.len());
                }
                a.extend(&s.tokens);
                b.extend(&gs.tokens);
            }
            report.videos = p.into_keys().collect();
            report.angles = Some(AngleReport::new(&a, &b)?);
        }
        EvalKind::Trim => {
            let p = by_video(src.read::<SegmentsRecord>(pred, |s| &s.video_id)?, |s| &s.video_id)?;
            let g = by_video(src.read::<SegmentsRecord>(gold, |s| &s.video_id)?, |s| &s.video_id)?;
            let videos: std::collections::BTreeSet<&String> = p.keys().chain(g.keys()).collect();
            let (mut correct, mut extra, mut missed) = (0, 0, 0);
            for v in &videos {
                let ps = p.get(*v).map_or(&[][..], |s| &s.rallies[..]);
                let gs = g.get(*v).map_or(&[][..], |s| &s.rallies[..]);
                let r = hitframe::trimming_report(ps, gs, iou)?;
                correct += r.correct;
                extra += r.extra;
                missed += r.missed;
            }
            report.videos = videos.into_iter().cloned().collect();
            report.trimming = Some(TrimmingReport::from_counts(correct, extra, missed)?);
        }
        EvalKind::Tokens => {
            let keep = |s: &hitframe::DirectionSequence| s.video_id.as_deref().is_none_or(|v| src.keeps(v));
            let p: Vec<_> = load_direction_sequences(pred)?.into_iter().filter(keep).collect();
            let g: BTreeMap<String, _> = load_direction_sequences(gold)?
                .into_iter()
                .filter(keep)
                .map(|s| (s.rally_id.clone(), s))
                .collect();
            let mut pairs = Vec::new();
            for s in &p {
                let gs =
                    g.get(&s.rally_id).with_context(|| format!("no gold sequence for {}", s.rally_id))?;
                pairs.push((s, gs));
            }
            report.rallies = Some(pairs.len());
            report.tokens = Some(hitframe::eval::token_report_many(pairs)?);
        }
        EvalKind::Hits => {
            let p: Vec<HitRecord> = src.read(pred, |h: &HitRecord| &h.video_id)?;
            let g: Vec<HitRecord> = src.read(gold, |h: &HitRecord| &h.video_id)?;
            let frames: BTreeMap<String, usize> = match (angles, total_frames) {
                (Some(a), _) => stages::read_records::<AngleStream>(a)?
                    .into_iter()
                    .map(|s| (s.video_id.clone(), s.len()))
                    .collect(),
                (None, Some(n)) => p.iter().chain(&g).map(|h| (h.video_id.clone(), n)).collect(),
                (None, None) => bail!("hit evaluation needs --angles or --total-frames"),
            };
            let mut per_video: BTreeMap<String, (Vec<usize>, Vec<usize>, usize)> = BTreeMap::new();
            for (h, is_pred) in p.iter().map(|h| (h, true)).chain(g.iter().map(|h| (h, false))) {
                let total = *frames
                    .get(&h.video_id)
                    .with_context(|| format!("no frame count for video {}", h.video_id))?;
                let e = per_video.entry(h.video_id.clone()).or_insert((Vec::new(), Vec::new(), total));
                if is_pred {
                    e.0.extend(&h.hits_global);
                } else {
                    e.1.extend(&h.hits_global);
                }
            }
            report.videos = per_video.keys().cloned().collect();
            report.rallies = Some(g.len());
            report.hits = pooled_hit_reports(&per_video, tolerances)?;
        }
    }
    Ok(report)
}

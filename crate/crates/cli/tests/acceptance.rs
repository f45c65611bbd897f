//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line per criterion; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use hitframe::angle::{accuracy, AngleDataset};
use hitframe::direction::PAD_INDEX;
use hitframe::eval::{hit_tolerance_counts, token_report_many};
use hitframe::frames::load_frames;
use hitframe::io::read_jsonl;
use hitframe::nn::gradcheck::grad_check;
use hitframe::nn::{
    conv_block, encoder_layer, multi_head_attention, AttentionVars, Dropout, EncoderVars, Graph, ParamVars,
    Tensor, Var,
};
use hitframe::synth::files;
use hitframe::transformer::{init_params, predict_directions, sequence_forward};
use hitframe::{
    detect_hits, segment_rallies, smooth_stream, AngleStream, DirectionSequence, DirectionToken, KSeqRecord,
    LengthMode, SaCnn, ShotAngleToken, SynthConfig, ToleranceConfig, TransformerConfig, TrimmingReport,
};
use hitframe_cli::pipeline::{run_pipeline, Inputs, PipelineConfig};
use hitframe_cli::report::Format;
use hitframe_cli::stages::{self, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

/// State shared between criteria: the synthetic dataset and the desk
/// checkpoints trained on it.
struct Shared {
    root: tempfile::TempDir,
    dataset: Option<PathBuf>,
    angle_checkpoint: Option<PathBuf>,
    direction_checkpoint: Option<PathBuf>,
}

impl Shared {
    fn dataset(&mut self) -> Result<PathBuf> {
        if let Some(d) = &self.dataset {
            return Ok(d.clone());
        }
        let dir = self.root.path().join("data");
        hitframe::generate_dataset(&SynthConfig::default(), &dir)?;
        self.dataset = Some(dir.clone());
        Ok(dir)
    }
}

type Criterion = fn(&mut Shared) -> Result<Outcome>;

fn main() {
    let mut shared = Shared {
        root: tempfile::tempdir().expect("temporary directory"),
        dataset: None,
        angle_checkpoint: None,
        direction_checkpoint: None,
    };
    let criteria: [(&str, &str, Duration, Criterion); 10] = [
        ("1", "trimming metric identity", Duration::from_secs(1), c1_metric_identity),
        ("2", "hit detection oracle", Duration::from_secs(5), c2_hit_oracle),
        ("3", "gradient suite", Duration::from_secs(120), c3_gradients),
        ("4", "masked loss exactness", Duration::MAX, c4_masked_loss),
        ("5", "segmentation properties", Duration::MAX, c5_segmentation),
        ("6a", "shot-angle classifier learns", Duration::from_secs(180), c6a_angle),
        ("6b", "direction model learns", Duration::from_secs(600), c6b_direction),
        ("6c", "end-to-end hit frames", Duration::MAX, c6c_pipeline),
        ("7", "tolerance report semantics", Duration::MAX, c7_tolerance),
        ("8", "pipeline determinism", Duration::MAX, c8_determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut shared)));
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(Ok(o)) if took > budget => (false, format!("{} [over {:?} budget]", o.detail, budget)),
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:<3} {name:<30} {} ({:.2}s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1
// ---------------------------------------------------------------------------

fn c1_metric_identity(_: &mut Shared) -> Result<Outcome> {
    let r = TrimmingReport::from_counts(287, 33, 36)?;
    let want = [0.8062, 0.8969, 0.8885, 0.8927];
    let got = [r.accuracy, r.precision, r.recall, r.f1];
    let ok =
        r.total_trimmed == 320 && r.actual == 323 && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-4);
    outcome(
        ok,
        format!(
            "acc={:.4} p={:.4} r={:.4} f1={:.4} trimmed={} actual={}",
            r.accuracy, r.precision, r.recall, r.f1, r.total_trimmed, r.actual
        ),
    )
}

// ---------------------------------------------------------------------------
// 2
// ---------------------------------------------------------------------------

/// Direct transcription of the hit rule: track the previous direction
/// (initially S) and record a hit where S turns into B or U, or B and U swap.
fn oracle_hits(seq: &[DirectionToken]) -> Vec<usize> {
    use DirectionToken::{B, S, U};
    let mut prev = S;
    let mut h = Vec::new();
    for (i, &dir) in seq.iter().enumerate() {
        if prev != dir {
            if prev == S {
                h.push(i);
            } else if prev == B {
                if dir == U {
                    h.push(i);
                }
            } else if prev == U && dir == B {
                h.push(i);
            }
            prev = dir;
        }
    }
    h
}

fn c2_hit_oracle(_: &mut Shared) -> Result<Outcome> {
    let mut total = 0usize;
    let mut mismatches = 0usize;
    for len in 1..=8u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            let seq: Vec<DirectionToken> = (0..len)
                .map(|_| {
                    let t = DirectionToken::REAL[c % 3];
                    c /= 3;
                    t
                })
                .collect();
            let got = detect_hits(&DirectionSequence::new("r", seq.clone())?)?.indices;
            total += 1;
            mismatches += usize::from(got != oracle_hits(&seq));
        }
    }
    outcome(total == 9840 && mismatches == 0, format!("{total} sequences, {mismatches} mismatches"))
}

// ---------------------------------------------------------------------------
// 3
// ---------------------------------------------------------------------------

const EPS: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed, non-uniform weights.
fn probe(g: &mut Graph, y: Var) -> hitframe::Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::new(vec![n], (0..n).map(|i| (0.7 * i as f64 + 0.3).sin()).collect())?;
    g.weighted_sum(y, &w)
}

fn dense(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> [Tensor; 2] {
    let b = 1.0 / (d_in as f64).sqrt();
    [random(rng, &[d_in, d_out], -b, b), random(rng, &[d_out], -b, b)]
}

fn attention_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<Tensor> {
    (0..4).flat_map(|_| dense(rng, d, d)).collect()
}

fn attention_vars(v: &[Var]) -> AttentionVars {
    AttentionVars { q: (v[0], v[1]), k: (v[2], v[3]), v: (v[4], v[5]), o: (v[6], v[7]) }
}

fn toy_config() -> TransformerConfig {
    TransformerConfig {
        d_model: 16,
        heads: 2,
        layers: 2,
        d_ff: 32,
        max_len: 12,
        classes: 4,
        dropout: 0.0,
        proj_hidden: 8,
    }
}

/// Twelve frames, the last three padded.
fn toy_sequence(rng: &mut ChaCha8Rng) -> (Tensor, Vec<bool>, Vec<usize>) {
    let mut x = random(rng, &[12, 68], -1.5, 1.5);
    for v in &mut x.values_mut()[9 * 68..] {
        *v = 0.0;
    }
    let mask = (0..12).map(|i| i >= 9).collect();
    let labels = (0..12).map(|i| if i >= 9 { PAD_INDEX } else { rng.random_range(0..3) }).collect();
    (x, mask, labels)
}

fn c3_gradients(_: &mut Shared) -> Result<Outcome> {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let mut p = vec![random(&mut rng, &[4, 6], -1.0, 1.0)];
        p.extend(dense(&mut rng, 6, 5));
        note(
            "affine",
            grad_check(
                |g, v| {
                    let y = g.affine(v[0], v[1], v[2])?;
                    probe(g, y)
                },
                &p,
                EPS,
            )?,
        );

        let p = vec![
            random(&mut rng, &[2, 2, 6, 6], -1.0, 1.0),
            random(&mut rng, &[3, 2, 3, 3], -0.4, 0.4),
            random(&mut rng, &[3], -0.1, 0.1),
            random(&mut rng, &[3], 0.5, 1.5),
            random(&mut rng, &[3], -0.5, 0.5),
        ];
        note(
            "conv_block",
            grad_check(
                |g, v| {
                    let (y, _) = conv_block(g, v[0], (v[1], v[2]), (v[3], v[4]), 2, 2, None, true, "bn")?;
                    probe(g, y)
                },
                &p,
                EPS,
            )?,
        );

        let mut p = vec![random(&mut rng, &[5, 8], -1.0, 1.0)];
        p.extend(attention_point(&mut rng, 8));
        let mask = [false, false, false, false, true];
        note(
            "multi_head_attention",
            grad_check(
                |g, v| {
                    let y = multi_head_attention(g, v[0], &attention_vars(&v[1..9]), 2, Some(&mask))?;
                    probe(g, y)
                },
                &p,
                EPS,
            )?,
        );

        let mut p = vec![random(&mut rng, &[5, 8], -1.0, 1.0)];
        p.extend(attention_point(&mut rng, 8));
        p.extend([random(&mut rng, &[8], 0.5, 1.5), random(&mut rng, &[8], -0.5, 0.5)]);
        p.extend(dense(&mut rng, 8, 12));
        p.extend(dense(&mut rng, 12, 8));
        p.extend([random(&mut rng, &[8], 0.5, 1.5), random(&mut rng, &[8], -0.5, 0.5)]);
        note(
            "encoder_layer",
            grad_check(
                |g, v| {
                    let ev = EncoderVars {
                        attn: attention_vars(&v[1..9]),
                        ln1: (v[9], v[10]),
                        ffn1: (v[11], v[12]),
                        ffn2: (v[13], v[14]),
                        ln2: (v[15], v[16]),
                    };
                    let y = encoder_layer(g, v[0], &ev, 2, Some(&mask), &mut Dropout::disabled())?;
                    probe(g, y)
                },
                &p,
                EPS,
            )?,
        );

        let p = vec![random(&mut rng, &[5, 4], -2.0, 2.0)];
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        note("softmax_cross_entropy", grad_check(|g, v| g.softmax_cross_entropy(v[0], &labels), &p, EPS)?);

        let p = vec![random(&mut rng, &[2, 3, 4], -2.0, 2.0)];
        let labels = [0, PAD_INDEX, 2, 1, 1, PAD_INDEX];
        note(
            "masked_cross_entropy",
            grad_check(|g, v| g.masked_cross_entropy(v[0], &labels, PAD_INDEX), &p, EPS)?,
        );

        let cfg = toy_config();
        let params = init_params(&cfg, seed)?;
        let (x, mask, labels) = toy_sequence(&mut rng);
        let mut p: Vec<Tensor> = params.tensors().map(|(_, t)| t.clone()).collect();
        let n = p.len();
        p.push(x);
        note(
            "full toy transformer",
            grad_check(
                |g, v| {
                    let vars = ParamVars::from_leaves(&params, &v[..n])?;
                    let logits = sequence_forward(g, &vars, &cfg, v[n], &mask, &mut Dropout::disabled())?;
                    g.masked_cross_entropy(logits, &labels, PAD_INDEX)
                },
                &p,
                EPS,
            )?,
        );
    }
    let ok = worst.iter().all(|(k, &e)| e <= if *k == "full toy transformer" { 1e-4 } else { 1e-5 });
    let detail = worst.iter().map(|(k, e)| format!("{k}={e:.1e}")).collect::<Vec<_>>().join(" ");
    outcome(ok, format!("5 seeds, max rel err: {detail}"))
}

// ---------------------------------------------------------------------------
// 4
// ---------------------------------------------------------------------------

fn c4_masked_loss(_: &mut Shared) -> Result<Outcome> {
    let mut g = Graph::new();
    let logits = g.leaf(Tensor::zeros(&[4, 4]));
    let loss = g.masked_cross_entropy(logits, &[0, 1, 2, PAD_INDEX], PAD_INDEX)?;
    let value = g.value(loss).values()[0];
    let grads = g.backward(loss)?;
    let pad_row = &grads.get(logits).context("logit gradient")?.values()[12..16];
    let loss_ok = (value - 4f64.ln()).abs() <= 1e-9;
    let logit_zero = pad_row.iter().all(|&v| v == 0.0);

    // Through the full network: padded input frames get exactly zero gradient.
    let cfg = toy_config();
    let params = init_params(&cfg, 7)?;
    let (x, mask, labels) = toy_sequence(&mut ChaCha8Rng::seed_from_u64(7));
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let xv = g.leaf(x);
    let logits = sequence_forward(&mut g, &vars, &cfg, xv, &mask, &mut Dropout::disabled())?;
    let loss = g.masked_cross_entropy(logits, &labels, PAD_INDEX)?;
    let grads = g.backward(loss)?;
    let gx = grads.get(xv).context("input gradient")?.values();
    let input_zero = gx[9 * 68..].iter().all(|&v| v == 0.0);
    let real_nonzero = gx[..9 * 68].iter().any(|&v| v != 0.0);
    outcome(
        loss_ok && logit_zero && input_zero && real_nonzero,
        format!(
            "loss - ln4 = {:.1e}, pad logit grads zero: {logit_zero}, pad input grads zero: {input_zero}",
            value - 4f64.ln()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5
// ---------------------------------------------------------------------------

fn random_stream(rng: &mut ChaCha8Rng) -> Vec<ShotAngleToken> {
    let len = rng.random_range(1..=500);
    let mut out = Vec::with_capacity(len);
    if rng.random_bool(0.5) {
        let p = rng.random_range(0.0..1.0);
        out.extend((0..len).map(|_| {
            if rng.random_bool(p) {
                ShotAngleToken::High
            } else {
                ShotAngleToken::Other
            }
        }));
    } else {
        let mut t = if rng.random_bool(0.5) { ShotAngleToken::High } else { ShotAngleToken::Other };
        while out.len() < len {
            let run = rng.random_range(1..=60).min(len - out.len());
            out.extend(std::iter::repeat_n(t, run));
            t = if t == ShotAngleToken::High { ShotAngleToken::Other } else { ShotAngleToken::High };
        }
    }
    out
}

fn c5_segmentation(_: &mut Shared) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut segments_seen = 0;
    for case in 0..1000 {
        let tokens = random_stream(&mut rng);
        let stream = AngleStream::new("v", 30.0, tokens.clone())?;
        let segs = segment_rallies(&stream)?;
        segments_seen += segs.len();
        let mut covered = vec![false; tokens.len()];
        let mut ok = segs.windows(2).all(|w| w[0].end_frame < w[1].start_frame);
        for s in &segs {
            for f in s.frames() {
                ok &= tokens[f] == ShotAngleToken::High;
                covered[f] = true;
            }
        }
        ok &= tokens.iter().zip(&covered).all(|(&t, &c)| c == (t == ShotAngleToken::High));
        let mut prev = ShotAngleToken::Other;
        let mut starts = 0;
        for &t in &tokens {
            starts += usize::from(prev == ShotAngleToken::Other && t == ShotAngleToken::High);
            prev = t;
        }
        ok &= starts == segs.len();
        ok &= smooth_stream(&stream, 1)? == stream;
        if !ok {
            failures.push(case);
        }
    }
    outcome(
        failures.is_empty(),
        format!("1000 streams, {segments_seen} segments, failing cases: {failures:?}"),
    )
}

// ---------------------------------------------------------------------------
// 6
// ---------------------------------------------------------------------------

fn c6a_angle(sh: &mut Shared) -> Result<Outcome> {
    let data = sh.dataset()?;
    let ck = stages::train_angle(
        &data.join(files::IMAGES_TRAIN),
        &data.join(files::LABELS_TRAIN),
        Profile::Desk,
        None,
        0,
    )?;
    let epochs = ck.history.len();
    let path = sh.root.path().join("angle.json");
    ck.save(&path)?;
    let model = SaCnn::from_checkpoint(ck)?;
    let frames = load_frames(&data.join(files::IMAGES_TEST))?;
    let labels = stages::load_angle_labels(&data.join(files::LABELS_TEST))?;
    let test = AngleDataset::from_frames(&frames, &labels, &model.config.preprocess)?;
    let acc = accuracy(&model, &test)?;
    sh.angle_checkpoint = Some(path);
    outcome(
        acc >= 0.95 && epochs <= 5,
        format!("{epochs} epochs, test accuracy {acc:.4} on {} images", test.len()),
    )
}

fn c6b_direction(sh: &mut Shared) -> Result<Outcome> {
    let data = sh.dataset()?;
    let train: Vec<KSeqRecord> = read_jsonl(&data.join(files::KSEQ_TRAIN))?;
    let test: Vec<KSeqRecord> = read_jsonl(&data.join(files::KSEQ_TEST))?;
    let ck = stages::train_direction(&train, Profile::Desk, None, 0, LengthMode::Strict)?;
    let cfg = ck.config.clone();
    let epochs = ck.history.len();
    let path = sh.root.path().join("direction.json");
    ck.save(&path)?;
    let model = hitframe::DirectionModel::from_checkpoint(ck)?;
    let pred = test
        .iter()
        .map(|r| predict_directions(&model, r, LengthMode::Strict))
        .collect::<hitframe::Result<Vec<_>>>()?;
    let gold = test.iter().map(KSeqRecord::labels).collect::<hitframe::Result<Vec<_>>>()?;
    let report = token_report_many(pred.iter().zip(&gold))?;
    sh.direction_checkpoint = Some(path);
    let shape_ok = cfg.d_model <= 32 && cfg.layers == 2 && cfg.max_len <= 120 && epochs <= 50;
    outcome(
        shape_ok && train.len() == 200 && test.len() == 50 && report.accuracy >= 0.90,
        format!(
            "d_model {} layers {} max_len {}, {epochs} epochs, {}/{} rallies, token accuracy {:.4}",
            cfg.d_model,
            cfg.layers,
            cfg.max_len,
            train.len(),
            test.len(),
            report.accuracy
        ),
    )
}

fn c6c_pipeline(sh: &mut Shared) -> Result<Outcome> {
    let data = sh.dataset()?;
    let angle = sh.angle_checkpoint.clone().context("criterion 6a produced no checkpoint")?;
    let direction = sh.direction_checkpoint.clone().context("criterion 6b produced no checkpoint")?;
    let cfg = PipelineConfig {
        output_dir: sh.root.path().join("pipeline"),
        seed: 0,
        min_run: 1,
        strict: false,
        hold_last: true,
        length_mode: LengthMode::Strict,
        tolerances: vec![2],
        iou_threshold: 0.5,
        formats: vec![Format::Json],
        videos: Vec::new(),
        inputs: Inputs {
            keypoints: data.join(files::KEYPOINTS_TEST),
            frames: Some(data.join(files::FRAMES_TEST)),
            video_id: Some(hitframe::synth::TEST_VIDEO.into()),
            fps: 30.0,
            angle_checkpoint: Some(angle),
            direction_checkpoint: Some(direction),
            gold_segments: Some(data.join(files::SEGMENTS)),
            gold_hits: Some(data.join(files::HITS)),
            ..Inputs::default()
        },
        train_angle: None,
        train_direction: None,
    };
    let out = run_pipeline(&cfg)?;
    let hit = out.report.hits.first().context("no hit report")?;
    let trim = out.report.trimming.as_ref().context("no trimming report")?;
    outcome(
        hit.tol == 2 && hit.metrics.f1 >= 0.95,
        format!(
            "±2: tp={} fp={} fn={} F1={:.4}; trimming accuracy {:.4} over {} rallies",
            hit.counts.tp, hit.counts.fp, hit.counts.fn_, hit.metrics.f1, trim.accuracy, trim.actual
        ),
    )
}

// ---------------------------------------------------------------------------
// 7
// ---------------------------------------------------------------------------

fn random_frames(rng: &mut ChaCha8Rng, total: usize) -> Vec<usize> {
    let n = rng.random_range(0..15);
    let mut v: Vec<usize> = (0..n).map(|_| rng.random_range(0..total)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn c7_tolerance(_: &mut Shared) -> Result<Outcome> {
    let counts = |p: &[usize], a: &[usize], total: usize, tol: usize| {
        hit_tolerance_counts(p, a, total, ToleranceConfig::new(tol)?)
    };
    let e1 = counts(&[100], &[110], 200, 15)?;
    let e2 = counts(&[100], &[110], 200, 5)?;
    let e3 = hitframe::hit_tolerance_report(&[12, 80], &[10, 50], 100, ToleranceConfig::new(5)?)?;
    let examples = (e1.tp, e1.fp, e1.fn_) == (1, 0, 0)
        && (e2.tp, e2.fp, e2.fn_) == (0, 1, 1)
        && (e3.counts.tp, e3.counts.fp, e3.counts.fn_, e3.counts.tn) == (1, 1, 1, 97)
        && (e3.metrics.accuracy - 0.98).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..1000 {
        let total = rng.random_range(20..400);
        let p = random_frames(&mut rng, total);
        let a = random_frames(&mut rng, total);
        let mut last: Option<hitframe::BinaryCounts> = None;
        for tol in 1..=30 {
            let c = counts(&p, &a, total, tol)?;
            if let Some(l) = last {
                if c.tp < l.tp || c.fp > l.fp || c.fn_ > l.fn_ {
                    violations += 1;
                }
            }
            last = Some(c);
        }
    }
    outcome(
        examples && violations == 0,
        format!("examples reproduced: {examples}, 1000 random cases × tol 1..=30, {violations} monotonicity violations"),
    )
}

// ---------------------------------------------------------------------------
// 8
// ---------------------------------------------------------------------------

fn files_under(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn c8_determinism(sh: &mut Shared) -> Result<Outcome> {
    let data = sh.dataset()?;
    let config = format!(
        r#"output_dir = "out"
seed = 3
tolerances = [2, 5]
formats = ["json", "table", "csv"]

[inputs]
keypoints = "{data}/{kp}"
frames = "{data}/{frames}"
video_id = "synth_test"
gold_angles = "{data}/{angles}"
gold_segments = "{data}/{segs}"
gold_directions = "{data}/{kseq_test}"
gold_hits = "{data}/{hits}"

[train_angle]
images = "{data}/{images}"
labels = "{data}/{labels}"
epochs = 2

[train_direction]
kseq = "{data}/{kseq_train}"
epochs = 3
"#,
        data = data.display(),
        kp = files::KEYPOINTS_TEST,
        frames = files::FRAMES_TEST,
        angles = files::ANGLES,
        segs = files::SEGMENTS,
        kseq_test = files::KSEQ_TEST,
        hits = files::HITS,
        images = files::IMAGES_TRAIN,
        labels = files::LABELS_TRAIN,
        kseq_train = files::KSEQ_TRAIN,
    );
    let mut runs = Vec::new();
    for name in ["run_a", "run_b"] {
        let dir = sh.root.path().join(name);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("pipeline.toml");
        std::fs::write(&path, &config)?;
        let cfg = PipelineConfig::load(&path)?;
        // Exercise the whole chain, training stages included.
        ensure!(cfg.train_angle.is_some() && cfg.train_direction.is_some());
        run_pipeline(&cfg)?;
        runs.push(files_under(&dir.join("out"))?);
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let ckpts = a.keys().filter(|k| k.starts_with("checkpoints")).count();
    outcome(
        differing.is_empty() && ckpts == 2,
        format!("{} files compared ({ckpts} checkpoints), differing: {differing:?}", a.len()),
    )
}

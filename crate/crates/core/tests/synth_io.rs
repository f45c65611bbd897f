use std::collections::BTreeMap;
use std::path::Path;

use hitframe::frames::read_frame_stack;
use hitframe::io::{read_jsonl, write_jsonl, KeypointFrameRecord, SegmentsRecord};
use hitframe::synth::{files, TEST_VIDEO};
use hitframe::{
    detect_hits, generate_dataset, segment_rallies, AngleStream, HitRecord, KSeqRecord, RallySegment,
    SynthConfig,
};

fn small() -> SynthConfig {
    SynthConfig { seed: 11, rallies: 20, image_samples: (16, 8), ..SynthConfig::default() }
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn generation_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&small(), a.path()).unwrap();
    generate_dataset(&small(), b.path()).unwrap();
    let (ca, cb) = (contents(a.path()), contents(b.path()));
    assert_eq!(ca.len(), 12);
    assert_eq!(ca, cb);

    let c = tempfile::tempdir().unwrap();
    generate_dataset(&SynthConfig { seed: 12, ..small() }, c.path()).unwrap();
    assert_ne!(contents(c.path())[files::KSEQ_TRAIN], ca[files::KSEQ_TRAIN]);
}

#[test]
fn records_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), dir.path()).unwrap();
    let out = tempfile::tempdir().unwrap();

    fn check<T: serde::de::DeserializeOwned + serde::Serialize>(src: &Path, dst: &Path) {
        let records: Vec<T> = read_jsonl(src).unwrap();
        write_jsonl(dst, &records).unwrap();
        assert_eq!(std::fs::read(src).unwrap(), std::fs::read(dst).unwrap(), "{}", src.display());
    }
    let d = dir.path();
    let o = out.path().join("x.jsonl");
    check::<KSeqRecord>(&d.join(files::KSEQ_TRAIN), &o);
    check::<KSeqRecord>(&d.join(files::KSEQ_TEST), &o);
    check::<AngleStream>(&d.join(files::ANGLES), &o);
    check::<SegmentsRecord>(&d.join(files::SEGMENTS), &o);
    check::<HitRecord>(&d.join(files::HITS), &o);
    check::<KeypointFrameRecord>(&d.join(files::KEYPOINTS_TEST), &o);
}

#[test]
fn gold_files_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let summary = generate_dataset(&cfg, dir.path()).unwrap();
    let d = dir.path();

    let angles: Vec<AngleStream> = read_jsonl(&d.join(files::ANGLES)).unwrap();
    let segments: Vec<SegmentsRecord> = read_jsonl(&d.join(files::SEGMENTS)).unwrap();
    for (a, s) in angles.iter().zip(&segments) {
        assert_eq!(a.video_id, s.video_id);
        assert_eq!(segment_rallies(a).unwrap(), s.rallies);
    }

    let mut kseq: Vec<KSeqRecord> = read_jsonl(&d.join(files::KSEQ_TRAIN)).unwrap();
    kseq.extend(read_jsonl::<KSeqRecord>(&d.join(files::KSEQ_TEST)).unwrap());
    let hits: Vec<HitRecord> = read_jsonl(&d.join(files::HITS)).unwrap();
    assert_eq!(kseq.len(), cfg.rallies);
    assert_eq!(hits.len(), cfg.rallies);
    for (k, h) in kseq.iter().zip(&hits) {
        assert_eq!(k.rally_id, h.rally_id);
        let labels = k.labels().unwrap();
        assert_eq!(detect_hits(&labels).unwrap().indices, h.hits_local);
        let start = k.start_frame.unwrap();
        let seg = RallySegment::new(start, start + k.len() - 1).unwrap();
        let rallies = &segments.iter().find(|s| Some(&s.video_id) == k.video_id.as_ref()).unwrap().rallies;
        assert!(rallies.contains(&seg));
        assert_eq!(h.hits_global, h.hits_local.iter().map(|i| i + start).collect::<Vec<_>>());
    }
    assert_eq!(summary.splits[0].keypoint_sequences, 16);
    assert_eq!(summary.splits[1].keypoint_sequences, 4);

    let frames = read_frame_stack(&d.join(files::FRAMES_TEST)).unwrap();
    let test_angles = angles.iter().find(|a| a.video_id == TEST_VIDEO).unwrap();
    assert_eq!(frames.len(), test_angles.len());
    let keypoints: Vec<KeypointFrameRecord> = read_jsonl(&d.join(files::KEYPOINTS_TEST)).unwrap();
    assert_eq!(keypoints.len(), test_angles.len());
    assert!(keypoints[0].court.is_some());
}

#[test]
fn images_can_be_skipped() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&SynthConfig { write_images: false, ..small() }, dir.path()).unwrap();
    let names = contents(dir.path());
    assert!(!names.contains_key(files::FRAMES_TEST));
    assert!(!names.contains_key(files::IMAGES_TRAIN));
    assert!(names.contains_key(files::MANIFEST));
}

use std::path::Path;

use a2summ::alignmask::SegmentWindow;
use a2summ::data::{
    decode_sample, encode_sample, gen_synthetic, generate_samples, load_and_validate, load_splits, make_batch,
    salient_directions, write_dataset, GenConfig, Manifest, ManifestHeader, SampleRecord, Split, MANIFEST_FILE,
};
use a2summ::numerics::Tensor;
use a2summ::summarize::Segmentation;
use a2summ::Error;
use proptest::prelude::*;

fn small_gen(seed: u64) -> GenConfig {
    GenConfig { samples: 12, val_samples: 3, test_samples: 3, seed, ..GenConfig::default() }
}

fn record(id: &str, n: usize, m: usize) -> SampleRecord {
    let per = n / m;
    SampleRecord {
        id: id.into(),
        frame_features: Tensor::new(n, 2, (0..n * 2).map(|i| i as f64 * 0.5).collect()).unwrap(),
        sentence_features: Tensor::new(m, 3, (0..m * 3).map(|i| -(i as f64)).collect()).unwrap(),
        windows: (0..m).map(|k| SegmentWindow::new(k, k * per, if k + 1 == m { n } else { (k + 1) * per })).collect(),
        frame_labels: (0..n).map(|i| (i < per) as u8).collect(),
        sentence_labels: (0..m).map(|k| (k == 0) as u8).collect(),
        annotator_scores: None,
        segmentation: None,
        sentences_text: None,
        gt_summary_text: None,
    }
}

fn arb_record() -> impl Strategy<Value = SampleRecord> {
    (1usize..20, 0usize..6, any::<bool>(), any::<bool>(), any::<bool>()).prop_flat_map(|(n, m, ann, seg, text)| {
        let feats = prop::collection::vec(-1e3f32..1e3, n * 3 + m * 2);
        let windows = prop::collection::vec((0..=n, 0..=n), m);
        let labels = prop::collection::vec(0u8..2, n + m);
        let scores = prop::collection::vec(0f32..1.0, 2 * n);
        let words = prop::collection::vec(prop::collection::vec("[a-z]{1,5}", 0..4), m + 1);
        (feats, windows, labels, scores, words).prop_map(move |(f, w, l, a, t)| {
            let mut windows: Vec<SegmentWindow> =
                w.into_iter().enumerate().map(|(k, (x, y))| SegmentWindow::new(k, x.min(y), x.max(y))).collect();
            windows.sort_by_key(|w| w.start);
            let f: Vec<f64> = f.into_iter().map(f64::from).collect();
            SampleRecord {
                id: "x".into(),
                frame_features: Tensor::new(n, 3, f[..n * 3].to_vec()).unwrap(),
                sentence_features: Tensor::new(m, 2, f[n * 3..].to_vec()).unwrap(),
                windows,
                frame_labels: l[..n].to_vec(),
                sentence_labels: l[n..].to_vec(),
                annotator_scores: ann.then(|| Tensor::new(2, n, a.into_iter().map(f64::from).collect()).unwrap()),
                segmentation: seg.then(|| Segmentation::new(vec![0, n]).unwrap()),
                sentences_text: text.then(|| t[..m].to_vec()),
                gt_summary_text: text.then(|| t[m].clone()),
            }
        })
    })
}

proptest! {
    #[test]
    fn sample_bytes_round_trip(r in arb_record()) {
        prop_assert!(r.validate(None).is_ok());
        let bytes = encode_sample(&r);
        let back = decode_sample(&bytes, "x", Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(encode_sample(&back), bytes);
    }

    #[test]
    fn truncated_files_are_format_errors(r in arb_record(), cut in 0usize..1000) {
        let bytes = encode_sample(&r);
        let cut = cut % bytes.len();
        let res = decode_sample(&bytes[..cut], "x", Path::new("mem"));
        prop_assert!(matches!(res, Err(Error::Format { .. })), "{:?}", res.err());
    }
}

#[test]
fn trailing_bytes_and_bad_magic_are_rejected() {
    let mut bytes = encode_sample(&record("a", 6, 2));
    bytes.push(0);
    assert!(decode_sample(&bytes, "a", Path::new("m")).is_err());
    let mut bytes = encode_sample(&record("a", 6, 2));
    bytes[0] = b'X';
    assert!(decode_sample(&bytes, "a", Path::new("m")).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let header = ManifestHeader { dataset: "toy".into(), video_dim: 2, text_dim: 3 };
    let samples = vec![(Split::Train, record("a", 6, 2)), (Split::Test, record("b", 9, 3))];
    write_dataset(dir.path(), &header, &samples).unwrap();
    let loaded = load_and_validate(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded[0], samples[0].1);
    assert_eq!(loaded[1], samples[1].1);
}

fn write_one(dir: &Path, r: SampleRecord) -> Result<Vec<SampleRecord>, Error> {
    let header = ManifestHeader { dataset: "toy".into(), video_dim: 2, text_dim: 3 };
    write_dataset(dir, &header, &[(Split::Train, r)])?;
    load_and_validate(&dir.join(MANIFEST_FILE))
}

fn field_of(e: Error) -> (String, String) {
    match e {
        Error::Validation { sample, field, .. } => (sample, field),
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn window_past_the_end_names_sample_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = record("late", 6, 2);
    r.windows[1].end = 7;
    assert_eq!(field_of(write_one(dir.path(), r).unwrap_err()), ("late".into(), "windows".into()));
}

#[test]
fn nan_feature_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = record("nan", 6, 2);
    r.frame_features.set(2, 1, f64::NAN);
    assert_eq!(field_of(write_one(dir.path(), r).unwrap_err()), ("nan".into(), "frame_features".into()));
}

#[test]
fn missing_file_and_duplicate_ids_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let header = ManifestHeader { dataset: "toy".into(), video_dim: 2, text_dim: 3 };
    write_dataset(dir.path(), &header, &[(Split::Train, record("a", 6, 2))]).unwrap();
    std::fs::remove_file(dir.path().join("a.a2ds")).unwrap();
    assert!(matches!(load_and_validate(&dir.path().join(MANIFEST_FILE)), Err(Error::Io { .. })));

    let manifest = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let entry = text.lines().nth(1).unwrap().to_string();
    std::fs::write(&manifest, format!("{text}{entry}\n")).unwrap();
    assert!(Manifest::read(&manifest).is_err());
}

#[test]
fn wrong_feature_width_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let header = ManifestHeader { dataset: "toy".into(), video_dim: 5, text_dim: 3 };
    write_dataset(dir.path(), &header, &[(Split::Train, record("w", 6, 2))]).unwrap();
    let (_, field) = field_of(load_and_validate(&dir.path().join(MANIFEST_FILE)).unwrap_err());
    assert_eq!(field, "frame_features");
}

#[test]
fn generation_is_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_synthetic(&small_gen(5), a.path()).unwrap();
    gen_synthetic(&small_gen(5), b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 13);
    for name in names {
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
    let c = generate_samples(&small_gen(6)).unwrap();
    let a = generate_samples(&small_gen(5)).unwrap();
    assert_ne!(a.samples[0].1, c.samples[0].1);
}

#[test]
fn generated_manifest_validates_with_expected_splits() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = gen_synthetic(&small_gen(1), dir.path()).unwrap();
    assert_eq!((manifest.count(Split::Train), manifest.count(Split::Val), manifest.count(Split::Test)), (6, 3, 3));
    let ds = load_splits(&dir.path().join(MANIFEST_FILE), &[Split::Val]).unwrap();
    assert_eq!(ds.split(Split::Val).len(), 3);
    assert!(ds.split(Split::Train).is_empty());
}

#[test]
fn zero_noise_makes_frames_of_a_window_identical() {
    let g = generate_samples(&GenConfig { noise: 0.0, ..small_gen(2) }).unwrap();
    for (_, r) in &g.samples {
        for w in &r.windows {
            for f in w.start + 1..w.end {
                assert_eq!(r.frame_features.row(f), r.frame_features.row(w.start));
            }
        }
    }
}

#[test]
fn gaps_leave_uncovered_frames() {
    let g = generate_samples(&GenConfig { gaps: true, ..small_gen(3) }).unwrap();
    let uncovered = g
        .samples
        .iter()
        .map(|(_, r)| (0..r.frames()).filter(|&f| !r.windows.iter().any(|w| w.contains(f))).count())
        .sum::<usize>();
    assert!(uncovered > 0);
    for (_, r) in &g.samples {
        r.validate(None).unwrap();
    }
}

fn mean_sim(r: &SampleRecord, dir: &[f64], key: bool) -> f64 {
    let rows: Vec<usize> = (0..r.frames()).filter(|&f| (r.frame_labels[f] == 1) == key).collect();
    rows.iter().map(|&f| r.frame_features.row(f).iter().zip(dir).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
        / rows.len() as f64
}

#[test]
fn key_frames_lean_towards_the_salient_direction() {
    for noise in [0.1, 0.2] {
        let cfg = GenConfig { noise, samples: 40, val_samples: 0, test_samples: 0, ..GenConfig::default() };
        let (video, _) = salient_directions(&cfg);
        for (_, r) in generate_samples(&cfg).unwrap().samples {
            assert!(mean_sim(&r, &video, true) > mean_sim(&r, &video, false), "{} at σ={noise}", r.id);
        }
    }
}

/// Mean salient similarity of key minus non-key rows, over a whole dataset,
/// for frames and for sentences.
fn salience_gaps(cfg: &GenConfig) -> (f64, f64) {
    let (video, text) = salient_directions(cfg);
    let sim = |row: &[f64], dir: &[f64]| row.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>();
    let mut acc = [[0.0f64; 2]; 4];
    for (_, r) in generate_samples(cfg).unwrap().samples {
        for f in 0..r.frames() {
            let k = r.frame_labels[f] as usize;
            acc[k][0] += sim(r.frame_features.row(f), &video);
            acc[k][1] += 1.0;
        }
        for s in 0..r.sentences() {
            let k = 2 + r.sentence_labels[s] as usize;
            acc[k][0] += sim(r.sentence_features.row(s), &text);
            acc[k][1] += 1.0;
        }
    }
    let mean = |i: usize| acc[i][0] / acc[i][1];
    (mean(1) - mean(0), mean(3) - mean(2))
}

#[test]
fn mismatch_windows_are_salient_in_both_modalities() {
    let base = GenConfig { samples: 60, val_samples: 0, test_samples: 0, distractor_fraction: 0.0, ..GenConfig::default() };
    let (fv, ft) = salience_gaps(&base);
    assert!(fv > 0.0 && ft > 0.0);
    // Every non-key window salient in both: keys no longer stand out.
    let (mv, mt) = salience_gaps(&GenConfig { mismatch_fraction: 1.0, ..base.clone() });
    assert!(mv.abs() < 0.25 * fv && mt.abs() < 0.25 * ft, "{mv} {mt} vs {fv} {ft}");
    // Labels are untouched by mismatch windows.
    let a = generate_samples(&base).unwrap();
    let b = generate_samples(&GenConfig { mismatch_fraction: 1.0, ..base }).unwrap();
    for ((_, x), (_, y)) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.sentence_labels, y.sentence_labels);
        assert_eq!(x.frame_labels, y.frame_labels);
    }
}

#[test]
fn window_probe_separates_keys() {
    let g = generate_samples(&GenConfig::default()).unwrap();
    assert!(g.probe_accuracy > 0.95, "{}", g.probe_accuracy);
}

#[test]
fn shipped_preset_keeps_keys_linearly_recoverable() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/synthetic_gen.toml");
    let cfg: GenConfig = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!((cfg.train_samples(), cfg.val_samples), (200, 50));
    assert_eq!((cfg.min_frames, cfg.max_frames, cfg.min_sentences, cfg.max_sentences), (40, 80, 6, 12));
    assert_eq!(cfg.noise, 0.1);
    let g = generate_samples(&cfg).unwrap();
    assert!(g.probe_accuracy > 0.95, "{}", g.probe_accuracy);
}

#[test]
fn invalid_generator_configs_are_rejected() {
    assert!(generate_samples(&GenConfig { samples: 0, ..GenConfig::default() }).is_err());
    assert!(generate_samples(&GenConfig { key_fraction: 1.5, ..GenConfig::default() }).is_err());
    assert!(generate_samples(&GenConfig { min_frames: 4, ..GenConfig::default() }).is_err());
    assert!(generate_samples(&GenConfig { distractor_fraction: 0.6, ..GenConfig::default() }).is_err());
    assert!(generate_samples(&GenConfig { mismatch_fraction: 0.5, ..GenConfig::default() }).is_err());
    assert!(generate_samples(&GenConfig { mismatch_fraction: 0.1, topics: 1, ..GenConfig::default() }).is_err());
}

#[test]
fn batch_pads_to_the_longest_sample() {
    let a = record("a", 3, 1);
    let b = record("b", 5, 2);
    let batch = make_batch(&[&a, &b], None).unwrap();
    assert_eq!((batch.pad_frames, batch.pad_sentences, batch.pad_len), (5, 2, 9));
    assert_eq!(batch.frames[0].rows(), 5);
    assert_eq!(batch.frame_valid[0], [true, true, true, false, false]);
    let layout = batch.layouts[0];
    for q in layout.real_len()..batch.pad_len {
        assert!(batch.masks[0].row(q).iter().all(|&v| !v));
        assert!(!batch.token_valid[0][q]);
    }
    let single = make_batch(&[&a], None).unwrap();
    assert_eq!(single.pad_len, a.frames() + a.sentences() + 2);
    assert!(make_batch(&[], None).is_err());
    assert!(make_batch(&[&b], Some(3)).is_err());
}

use std::path::Path;
use std::process::{Command, Output};

use a2summ::data::{load_and_validate, MANIFEST_FILE};
use a2summ::model::{load_checkpoint, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn a2summ(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a2summ")).args(args).current_dir(dir).output().unwrap()
}

fn a2summ_env(args: &[&str], dir: &Path, key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a2summ")).args(args).current_dir(dir).env(key, value).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    o
}

// One-line `error[E_CODE]: ...` diagnostics.
fn assert_error(o: &Output, code: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{code}]: ")), "{err}");
}

const GEN: &str = "samples = 14\nval_samples = 3\ntest_samples = 3\nmin_frames = 12\nmax_frames = 20\nmin_sentences = 3\nmax_sentences = 5\n";
const RUN: &str = "width = 8\nheads = 2\nlayers = 1\nepochs = 2\nbatch_size = 3\nneg_ratio = 4\ndataset = \"data/manifest.jsonl\"\nout = \"run\"\n";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), GEN).unwrap();
    std::fs::write(dir.path().join("run.toml"), RUN).unwrap();
    ok(a2summ(&["gen-data", "--config", "gen.toml", "--out", "data", "--seed", "3"], dir.path()));
    dir
}

#[test]
fn gen_data_is_reproducible_and_valid() {
    let a = workspace();
    let b = workspace();
    let files = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d.join("data")).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v.into_iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(load_and_validate(&a.path().join("data").join(MANIFEST_FILE)).unwrap().len(), 14);
}

#[test]
fn gen_data_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.toml"), "samples = 0\nval_samples = 0\ntest_samples = 0\n").unwrap();
    assert_error(&a2summ(&["gen-data", "--config", "g.toml"], dir.path()), "E_CONFIG");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.toml"), "widht = 8\n").unwrap();
    assert_error(&a2summ(&["train", "--config", "bad.toml"], dir.path()), "E_CONFIG");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_error(&a2summ(&["train", "--config", "nope.toml"], dir.path()), "E_IO");
}

#[test]
fn training_is_deterministic_and_never_touches_test_files() {
    let dir = workspace();
    // Training must not need the test split at all.
    for entry in std::fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap().lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(entry).unwrap();
        if v["split"] == "test" {
            std::fs::remove_file(dir.path().join("data").join(v["path"].as_str().unwrap())).unwrap();
        }
    }
    ok(a2summ(&["train", "--config", "run.toml", "--out", "r1"], dir.path()));
    ok(a2summ(&["train", "--config", "run.toml", "--out", "r2"], dir.path()));
    for f in ["best.ckpt", "last.ckpt"] {
        let a = std::fs::read(dir.path().join("r1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let log = std::fs::read_to_string(dir.path().join("r1/train_log.jsonl")).unwrap();
    let epochs: Vec<u64> = log.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, [0, 1, 2]);
    ok(a2summ(&["train", "--config", "run.toml", "--out", "r3", "--seed", "9"], dir.path()));
    assert_ne!(std::fs::read(dir.path().join("r1/last.ckpt")).unwrap(), std::fs::read(dir.path().join("r3/last.ckpt")).unwrap());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = workspace();
    std::fs::write(dir.path().join("z.toml"), format!("{RUN}").replace("epochs = 2", "epochs = 0")).unwrap();
    ok(a2summ(&["train", "--config", "z.toml", "--seed", "4"], dir.path()));
    let (model, params) = load_checkpoint(&dir.path().join("run/best.ckpt")).unwrap();
    let init = ModelParams::init(&model, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(params, init);
}

#[test]
fn eval_and_summarize_end_to_end() {
    let dir = workspace();
    ok(a2summ(&["train", "--config", "run.toml"], dir.path()));
    ok(a2summ(&["eval", "--config", "run.toml", "--checkpoint", "run/best.ckpt", "--out", "e1"], dir.path()));
    ok(a2summ(&["eval", "--config", "run.toml", "--checkpoint", "run/best.ckpt", "--out", "e2"], dir.path()));
    for f in ["metrics.tsv", "metrics.jsonl"] {
        let a = std::fs::read(dir.path().join("e1").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("e2").join(f)).unwrap());
    }
    let tsv = std::fs::read_to_string(dir.path().join("e1/metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 3 + 1);
    assert!(tsv.lines().last().unwrap().starts_with("mean\t"));

    let test = load_and_validate(&dir.path().join("data").join(MANIFEST_FILE)).unwrap();
    for mode in ["budget", "topk"] {
        let o = ok(a2summ(&["summarize", "--config", "run.toml", "--checkpoint", "run/best.ckpt", "--mode", mode], dir.path()));
        let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        for v in lines {
            let s = test.iter().find(|s| s.id == v["id"].as_str().unwrap()).unwrap();
            assert!(v["frames"].as_array().unwrap().iter().all(|f| (f.as_u64().unwrap() as usize) < s.frames()));
            assert!(v["sentences"].as_array().unwrap().iter().all(|k| (k.as_u64().unwrap() as usize) < s.sentences()));
            assert_eq!(v["frame_scores"].as_array().unwrap().len(), s.frames());
        }
    }
    // A full budget keeps every frame.
    std::fs::write(dir.path().join("all.toml"), format!("{RUN}budget_fraction = 1.0\n")).unwrap();
    let o = ok(a2summ(&["summarize", "--config", "all.toml", "--checkpoint", "run/best.ckpt"], dir.path()));
    for l in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let n = v["frame_scores"].as_array().unwrap().len();
        assert_eq!(v["frames"].as_array().unwrap().len(), n);
    }
}

#[test]
fn eval_rejects_a_mismatched_config() {
    let dir = workspace();
    ok(a2summ(&["train", "--config", "run.toml"], dir.path()));
    std::fs::write(dir.path().join("wide.toml"), RUN.replace("width = 8", "width = 16")).unwrap();
    assert_error(&a2summ(&["eval", "--config", "wide.toml", "--checkpoint", "run/best.ckpt"], dir.path()), "E_CONFIG");
    let o = a2summ_env(&["eval", "--config", "run.toml", "--checkpoint", "run/best.ckpt"], dir.path(), "A2SUMM_THREADS", "zero");
    assert_error(&o, "E_CONFIG");
    let o = a2summ_env(&["eval", "--config", "run.toml", "--checkpoint", "run/best.ckpt"], dir.path(), "A2SUMM_THREADS", "1");
    ok(o);
}

#[test]
fn selfcheck_passes_and_catches_a_corrupted_rule() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(a2summ(&["selfcheck"], dir.path()));
    assert!(stdout(&o).contains("0 failed"));
    let o = a2summ_env(&["selfcheck"], dir.path(), "A2SUMM_SELFCHECK_CORRUPT", "layer_norm");
    assert!(!o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL") && l.contains("grad layer_norm")), "{}", stdout(&o));
}

//! Command-line harness: `gen-data`, `train`, `eval`, `summarize` and
//! `selfcheck`. Errors print as `error[CODE]: message` with a nonzero exit.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, SelectionMode};
use crate::data::{gen_synthetic, load_splits, GenConfig, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict, select_frames, select_sentences, with_eval_pool};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::numerics::{corrupt_gradient_of, Tensor};
use crate::selfcheck;
use crate::train::train;

/// Names a primitive whose backward rule `selfcheck` should break on purpose.
pub const CORRUPT_ENV: &str = "A2SUMM_SELFCHECK_CORRUPT";

#[derive(Debug, Parser)]
#[command(name = "a2summ", version, about = "Aligned video and transcript summarization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the train split, selecting on the val split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint and write per-sample metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<SelectionMode>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Print the selected frames and sentences as JSON.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<SelectionMode>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Only this sample id.
        #[arg(long)]
        sample: Option<String>,
    },
    /// Gradient checks, brute-force comparisons and metric goldens.
    Selfcheck,
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn gen_data(common: &Common, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<GenConfig>(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => GenConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let (manifest, data) = gen_synthetic(&cfg, &dir)?;
    writeln!(
        stdout,
        "wrote {} samples ({} train, {} val, {} test) to {}; window probe accuracy {:.4}",
        manifest.entries.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        dir.display(),
        data.probe_accuracy
    )
    .map_err(|e| Error::io("stdout", e))
}

fn train_cmd(common: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = run_config(common)?;
    let data = load_splits(&cfg.dataset, &[Split::Train, Split::Val])?;
    create_dir(&cfg.out)?;
    let cfg_text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let cfg_path = cfg.out.join("config.toml");
    std::fs::write(&cfg_path, cfg_text).map_err(|e| Error::io(&cfg_path, e))?;
    let log_path = cfg.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let outcome = train(&cfg, &data, Some(&mut log))?;
    save_checkpoint(&cfg.out.join("best.ckpt"), &outcome.model, &outcome.best)?;
    save_checkpoint(&cfg.out.join("last.ckpt"), &outcome.model, &outcome.last)?;
    let best = outcome.best_record();
    writeln!(
        stdout,
        "best epoch {} (val frame F1 {:.4}, sentence F1 {:.4}); checkpoints in {}",
        outcome.best_epoch,
        best.val_frame_f1,
        best.val_sentence_f1,
        cfg.out.display()
    )
    .map_err(|e| Error::io("stdout", e))
}

/// Structural fields must agree between a checkpoint and the run config.
pub fn check_compatible(ckpt: &ModelConfig, cfg: &RunConfig, video_dim: usize, text_dim: usize) -> Result<()> {
    let want = cfg.model_config(video_dim, text_dim);
    let fields = [
        ("width", ckpt.width, want.width),
        ("heads", ckpt.heads, want.heads),
        ("layers", ckpt.layers, want.layers),
        ("video_dim", ckpt.video_dim, want.video_dim),
        ("text_dim", ckpt.text_dim, want.text_dim),
        ("max_positions", ckpt.max_positions, want.max_positions),
        ("max_segments", ckpt.max_segments, want.max_segments),
        ("alignment", ckpt.alignment as usize, want.alignment as usize),
    ];
    for (name, have, want) in fields {
        if have != want {
            return Err(Error::Config(format!("checkpoint has {name} = {have} but the config/dataset implies {want}")));
        }
    }
    Ok(())
}

fn load_for_inference(
    common: &Common,
    checkpoint: &Path,
    mode: Option<SelectionMode>,
    split: Split,
) -> Result<(RunConfig, ModelConfig, ModelParams<Tensor>, crate::data::Dataset)> {
    let mut cfg = run_config(common)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let (model, params) = load_checkpoint(checkpoint)?;
    let data = load_splits(&cfg.dataset, &[split])?;
    check_compatible(&model, &cfg, data.header.video_dim, data.header.text_dim)?;
    Ok((cfg, model, params, data))
}

fn eval_cmd(common: &Common, checkpoint: &Path, mode: Option<SelectionMode>, split: Split, stdout: &mut dyn Write) -> Result<()> {
    let (cfg, model, params, data) = load_for_inference(common, checkpoint, mode, split)?;
    let samples = data.split(split);
    let report = evaluate(&params, &model, &samples, &cfg)?;
    create_dir(&cfg.out)?;
    report.write(&cfg.out)?;
    let io = |e| Error::io("stdout", e);
    writeln!(stdout, "{} samples from the {split} split", samples.len()).map_err(io)?;
    for a in &report.aggregate {
        match a.mean {
            Some(m) => writeln!(stdout, "{:<14} {m:.4}  (n={})", a.metric, a.count).map_err(io)?,
            None => writeln!(stdout, "{:<14} NA", a.metric).map_err(io)?,
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryJson {
    id: String,
    frames: Vec<usize>,
    sentences: Vec<usize>,
    frame_scores: Vec<f64>,
    sentence_scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary_text: Option<Vec<String>>,
}

fn summarize_cmd(
    common: &Common,
    checkpoint: &Path,
    mode: Option<SelectionMode>,
    split: Split,
    only: Option<&str>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let (cfg, model, params, data) = load_for_inference(common, checkpoint, mode, split)?;
    let samples: Vec<_> = data.split(split).into_iter().filter(|s| only.map_or(true, |id| s.id == id)).collect();
    if let (Some(id), true) = (only, samples.is_empty()) {
        return Err(Error::Invalid(format!("no sample `{id}` in the {split} split")));
    }
    let scores = with_eval_pool(|| predict(&params, &model, &samples))??;
    for (s, sc) in samples.iter().zip(&scores) {
        let frames = select_frames(s, &sc.frame_scores, &cfg)?;
        let sentences = select_sentences(s, &sc.sentence_scores, &cfg);
        let summary_text = s.sentences_text.as_ref().map(|t| sentences.iter().map(|&k| t[k].join(" ")).collect());
        let out = SummaryJson {
            id: s.id.clone(),
            frames,
            sentences,
            frame_scores: sc.frame_scores.clone(),
            sentence_scores: sc.sentence_scores.clone(),
            summary_text,
        };
        let line = serde_json::to_string(&out).expect("serializable");
        writeln!(stdout, "{line}").map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}

/// Runs every self-check; returns whether all passed.
fn selfcheck_cmd(stdout: &mut dyn Write) -> Result<bool> {
    let corrupt = std::env::var(CORRUPT_ENV).ok().filter(|s| !s.is_empty());
    if let Some(op) = &corrupt {
        corrupt_gradient_of(Some(Box::leak(op.clone().into_boxed_str())));
    }
    let checks = selfcheck::run_all();
    corrupt_gradient_of(None);
    let io = |e| Error::io("stdout", e);
    if let Some(op) = &corrupt {
        writeln!(stdout, "note: backward rule of `{op}` deliberately corrupted").map_err(io)?;
    }
    for c in &checks {
        writeln!(stdout, "{} {:<28} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail).map_err(io)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(stdout, "{} checks, {failed} failed", checks.len()).map_err(io)?;
    Ok(failed == 0)
}

/// Executes a parsed command; `Ok(false)` means a check failed.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::GenData { common } => gen_data(common, stdout).map(|_| true),
        Command::Train { common } => train_cmd(common, stdout).map(|_| true),
        Command::Eval { common, checkpoint, mode, split } => {
            eval_cmd(common, checkpoint, *mode, *split, stdout).map(|_| true)
        }
        Command::Summarize { common, checkpoint, mode, split, sample } => {
            summarize_cmd(common, checkpoint, *mode, *split, sample.as_deref(), stdout).map(|_| true)
        }
        Command::Selfcheck => selfcheck_cmd(stdout),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            1
        }
    }
}

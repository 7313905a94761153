//! Run configuration: a flat TOML file whose keys are the fields of
//! [`RunConfig`]. Unknown keys are rejected; missing keys take the defaults
//! below. Relative `dataset` and `out` paths resolve against the directory
//! of the config file.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `width`, `heads`, `layers` | 32, 2, 2 | transformer shape |
//! | `dropout` | 0.1 | dropout rate |
//! | `max_positions`, `max_segments` | 256, 64 | embedding table sizes |
//! | `alignment` | true | alignment mask and segment embeddings |
//! | `alpha`, `gamma` | 0.25, 2.0 | focal loss |
//! | `beta`, `lambda` | 0.1, 3.0 | inter- and intra-sample weights |
//! | `neg_ratio`, `expansion` | 16, 4 | hard-negative mining |
//! | `learning_rate`, `weight_decay` | 1e-3, 1e-3 | optimizer |
//! | `epochs`, `batch_size`, `clip_norm` | 50, 4, 5.0 | schedule |
//! | `budget_fraction` | 0.15 | knapsack budget |
//! | `mode` | `"budget"` | `"budget"` or `"topk"` video selection |
//! | `top_k` | 0 | K when no ground truth exists (0: budget length) |
//! | `reduction` | `"max"` | annotator reduction for F1 |
//! | `rank_against` | `"per_annotator"` | or `"averaged"` annotator scores |
//! | `kts_penalty` | 1.0 | segmentation penalty when none is stored |
//! | `seed` | 0 | RNG seed |
//! | `dataset` | `"data/manifest.jsonl"` | manifest path |
//! | `out` | `"runs"` | output directory |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::Reduction;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Segment-level knapsack under a duration budget.
    Budget,
    /// Top-K frames and sentences.
    Topk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankAgainst {
    PerAnnotator,
    Averaged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub max_segments: usize,
    pub alignment: bool,

    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
    pub neg_ratio: usize,
    pub expansion: usize,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,

    pub budget_fraction: f64,
    pub mode: SelectionMode,
    pub top_k: usize,
    pub reduction: Reduction,
    pub rank_against: RankAgainst,
    pub kts_penalty: f64,

    pub seed: u64,
    pub dataset: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let l = LossWeights::default();
        Self {
            width: m.width,
            heads: m.heads,
            layers: m.layers,
            dropout: m.dropout,
            max_positions: m.max_positions,
            max_segments: m.max_segments,
            alignment: m.alignment,
            alpha: l.alpha,
            gamma: l.gamma,
            beta: l.beta,
            lambda: l.lambda,
            neg_ratio: l.neg_ratio,
            expansion: l.expansion,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            epochs: 50,
            batch_size: 4,
            clip_norm: 5.0,
            budget_fraction: 0.15,
            mode: SelectionMode::Budget,
            top_k: 0,
            reduction: Reduction::Max,
            rank_against: RankAgainst::PerAnnotator,
            kts_penalty: 1.0,
            seed: 0,
            dataset: PathBuf::from("data/manifest.jsonl"),
            out: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads, resolves relative paths, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = resolve(base, &cfg.dataset);
        cfg.out = resolve(base, &cfg.out);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, video_dim: usize, text_dim: usize) -> ModelConfig {
        ModelConfig {
            width: self.width,
            heads: self.heads,
            layers: self.layers,
            video_dim,
            text_dim,
            max_positions: self.max_positions,
            max_segments: self.max_segments,
            dropout: self.dropout,
            alignment: self.alignment,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            gamma: self.gamma,
            beta: self.beta,
            lambda: self.lambda,
            neg_ratio: self.neg_ratio,
            expansion: self.expansion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(1, 1).validate()?;
        self.loss_weights().validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("clip_norm", self.clip_norm)?;
        positive("kts_penalty", self.kts_penalty)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config(format!("budget_fraction {} outside (0, 1]", self.budget_fraction)));
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

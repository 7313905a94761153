//! Scoring samples with a trained model and computing the metric report.
//!
//! Work is spread over samples on a thread pool capped by the
//! `A2SUMM_THREADS` environment variable; results are reduced in sample
//! order, so reports do not depend on the thread count.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RankAgainst, RunConfig, SelectionMode};
use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::metrics::{
    cosine_summary_sim, kendall_tau, keyshot_f1, mask_from_indices, rouge_l, rouge_n, spearman_rho,
};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::summarize::{budget_frames, budgeted_video_summary, default_max_segments, kts_segment, topk_select};

pub const THREADS_ENV: &str = "A2SUMM_THREADS";

/// Runs `f` on a pool sized by `A2SUMM_THREADS` (all cores when unset).
pub fn with_eval_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: String,
    pub frame_scores: Vec<f64>,
    pub sentence_scores: Vec<f64>,
}

/// Inference over samples, in order.
pub fn predict(params: &ModelParams<Tensor>, cfg: &ModelConfig, samples: &[&SampleRecord]) -> Result<Vec<SampleScores>> {
    samples
        .par_iter()
        .map(|s| {
            let out = forward(params, cfg, &s.frame_features, &s.sentence_features, &s.windows)?;
            Ok(SampleScores { id: s.id.clone(), frame_scores: out.frame_scores, sentence_scores: out.sentence_scores })
        })
        .collect()
}

/// F1 of the top-K items against the labels with K = number of positives;
/// `None` when there are no positives.
pub fn topk_f1(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let k = labels.iter().filter(|&&l| l == 1).count();
    if k == 0 {
        return None;
    }
    let hits = topk_select(scores, k).iter().filter(|&&i| labels[i] == 1).count();
    // |pred| = |gt| = k, so precision = recall = F1.
    Some(hits as f64 / k as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Mean top-K F1 over samples for frames and for sentences.
pub fn validation_f1(scores: &[SampleScores], samples: &[&SampleRecord]) -> (f64, f64) {
    let frame = mean(scores.iter().zip(samples).filter_map(|(p, s)| topk_f1(&p.frame_scores, &s.frame_labels)));
    let sent = mean(scores.iter().zip(samples).filter_map(|(p, s)| topk_f1(&p.sentence_scores, &s.sentence_labels)));
    (frame.unwrap_or(0.0), sent.unwrap_or(0.0))
}

/// Per-sample metrics; `None` where a metric is undefined for the sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub f1: Option<f64>,
    pub frame_topk_f1: Option<f64>,
    pub sentence_f1: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    pub rouge_l: Option<f64>,
    pub cosine: Option<f64>,
}

impl SampleMetrics {
    const COLUMNS: [&'static str; 9] =
        ["f1", "frame_topk_f1", "sentence_f1", "tau", "rho", "rouge1", "rouge2", "rouge_l", "cosine"];

    fn values(&self) -> [Option<f64>; 9] {
        [
            self.f1,
            self.frame_topk_f1,
            self.sentence_f1,
            self.tau,
            self.rho,
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.cosine,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: Option<f64>,
    /// Samples for which the metric was defined.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub samples: Vec<SampleMetrics>,
    pub aggregate: Vec<Aggregate>,
}

impl Report {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.aggregate.iter().find(|a| a.metric == metric).and_then(|a| a.mean)
    }

    /// Tab-separated table, one row per sample plus a final `mean` row.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("id");
        for c in SampleMetrics::COLUMNS {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.id);
            for v in s.values() {
                out.push('\t');
                out.push_str(&fmt(v));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for a in &self.aggregate {
            out.push('\t');
            out.push_str(&fmt(a.mean));
        }
        out.push('\n');
        out
    }

    /// One JSON object per sample, one per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("metrics.tsv", self.to_tsv()), ("metrics.jsonl", self.to_jsonl())] {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Frames selected for the video summary under the configured mode.
pub fn select_frames(sample: &SampleRecord, frame_scores: &[f64], cfg: &RunConfig) -> Result<Vec<usize>> {
    let n = sample.frames();
    match cfg.mode {
        SelectionMode::Budget => {
            let seg = match &sample.segmentation {
                Some(s) => s.clone(),
                None => kts_segment(&sample.frame_features, default_max_segments(n), cfg.kts_penalty),
            };
            Ok(budgeted_video_summary(frame_scores, &seg, cfg.budget_fraction)?.frames)
        }
        SelectionMode::Topk => Ok(topk_select(frame_scores, default_k(&sample.frame_labels, cfg.top_k, || {
            budget_frames(n, cfg.budget_fraction)
        }))),
    }
}

/// Sentences selected for the text summary.
pub fn select_sentences(sample: &SampleRecord, sentence_scores: &[f64], cfg: &RunConfig) -> Vec<usize> {
    let m = sample.sentences();
    topk_select(sentence_scores, default_k(&sample.sentence_labels, cfg.top_k, || m.div_ceil(3)))
}

/// Ground-truth summary length, else the configured K, else a fallback.
fn default_k(labels: &[u8], top_k: usize, fallback: impl FnOnce() -> usize) -> usize {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives > 0 {
        positives
    } else if top_k > 0 {
        top_k
    } else {
        fallback()
    }
}

fn rank_metric(
    scores: &[f64],
    annotators: &[Vec<f64>],
    mode: RankAgainst,
    f: fn(&[f64], &[f64]) -> Result<f64>,
) -> Option<f64> {
    match mode {
        RankAgainst::PerAnnotator => mean(annotators.iter().filter_map(|a| f(scores, a).ok())),
        RankAgainst::Averaged => {
            let n = annotators.len() as f64;
            let avg: Vec<f64> =
                (0..scores.len()).map(|i| annotators.iter().map(|a| a[i]).sum::<f64>() / n).collect();
            f(scores, &avg).ok()
        }
    }
}

/// Every metric for one sample given its predicted scores.
pub fn sample_metrics(sample: &SampleRecord, scores: &SampleScores, cfg: &RunConfig) -> Result<SampleMetrics> {
    if scores.frame_scores.len() != sample.frames() || scores.sentence_scores.len() != sample.sentences() {
        return Err(Error::Shape(format!("scores for {} do not match its lengths", sample.id)));
    }
    let frames = select_frames(sample, &scores.frame_scores, cfg)?;
    let pred = mask_from_indices(sample.frames(), &frames);
    let f1 = Some(keyshot_f1(&pred, &sample.gt_frame_masks(), cfg.reduction)?);
    let annotators = sample.gt_frame_scores();
    let tau = rank_metric(&scores.frame_scores, &annotators, cfg.rank_against, kendall_tau);
    let rho = rank_metric(&scores.frame_scores, &annotators, cfg.rank_against, spearman_rho);

    let sentences = select_sentences(sample, &scores.sentence_scores, cfg);
    let (mut rouge1, mut rouge2, mut rl) = (None, None, None);
    if let (Some(texts), Some(reference)) = (&sample.sentences_text, &sample.gt_summary_text) {
        let cand: Vec<&str> = sentences.iter().flat_map(|&k| texts[k].iter().map(String::as_str)).collect();
        let reference: Vec<&str> = reference.iter().map(String::as_str).collect();
        rouge1 = rouge_n(&cand, &reference, 1).ok().map(|p| p.f1);
        rouge2 = rouge_n(&cand, &reference, 2).ok().map(|p| p.f1);
        rl = rouge_l(&cand, &reference).ok().map(|p| p.f1);
    }
    let gt_frames: Vec<usize> = (0..sample.frames()).filter(|&i| sample.frame_labels[i] == 1).collect();
    let cosine = cosine_summary_sim(&sample.frame_features, &frames, &gt_frames).ok();
    Ok(SampleMetrics {
        id: sample.id.clone(),
        f1,
        frame_topk_f1: topk_f1(&scores.frame_scores, &sample.frame_labels),
        sentence_f1: topk_f1(&scores.sentence_scores, &sample.sentence_labels),
        tau,
        rho,
        rouge1,
        rouge2,
        rouge_l: rl,
        cosine,
    })
}

/// Metrics for precomputed scores (model predictions or baselines).
pub fn evaluate_scores(samples: &[&SampleRecord], scores: &[SampleScores], cfg: &RunConfig) -> Result<Report> {
    if samples.len() != scores.len() {
        return Err(Error::Shape(format!("{} samples but {} score sets", samples.len(), scores.len())));
    }
    let per: Vec<SampleMetrics> =
        samples.par_iter().zip(scores).map(|(s, p)| sample_metrics(s, p, cfg)).collect::<Result<_>>()?;
    let aggregate = SampleMetrics::COLUMNS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let defined: Vec<f64> = per.iter().filter_map(|m| m.values()[c]).collect();
            Aggregate { metric: name.to_string(), mean: mean(defined.iter().copied()), count: defined.len() }
        })
        .collect();
    Ok(Report { samples: per, aggregate })
}

/// Predict then evaluate, on the `A2SUMM_THREADS` pool.
pub fn evaluate(
    params: &ModelParams<Tensor>,
    model: &ModelConfig,
    samples: &[&SampleRecord],
    cfg: &RunConfig,
) -> Result<Report> {
    with_eval_pool(|| {
        let scores = predict(params, model, samples)?;
        evaluate_scores(samples, &scores, cfg)
    })?
}

/// Scores equal to the labels, the ceiling of every selection metric.
pub fn oracle_scores(samples: &[&SampleRecord]) -> Vec<SampleScores> {
    samples
        .iter()
        .map(|s| SampleScores {
            id: s.id.clone(),
            frame_scores: s.frame_labels.iter().map(|&l| l as f64).collect(),
            sentence_scores: s.sentence_labels.iter().map(|&l| l as f64).collect(),
        })
        .collect()
}

/// Uniform random scores from a seeded generator.
pub fn random_scores(samples: &[&SampleRecord], seed: u64) -> Vec<SampleScores> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| SampleScores {
            id: s.id.clone(),
            frame_scores: (0..s.frames()).map(|_| rng.gen()).collect(),
            sentence_scores: (0..s.sentences()).map(|_| rng.gen()).collect(),
        })
        .collect()
}


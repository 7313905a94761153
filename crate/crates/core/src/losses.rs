//! Training objective: focal classification loss, batch-level (inter-sample)
//! contrastive loss over CLS embeddings, within-sample (intra-sample)
//! contrastive loss over key frames/sentences with mined hard negatives.

use serde::{Deserialize, Serialize};

use crate::alignmask::TokenLayout;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Scores are clamped into `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before logs.
pub const SCORE_CLAMP: f64 = 1e-7;
pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub gamma: f64,
    /// Weight of the inter-sample term.
    pub beta: f64,
    /// Weight of the intra-sample term.
    pub lambda: f64,
    /// Hard negatives per modality are `⌊len / neg_ratio⌋`.
    pub neg_ratio: usize,
    /// Timesteps added on each side of key regions before mining negatives.
    pub expansion: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0, beta: 0.1, lambda: 3.0, neg_ratio: 16, expansion: 4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.gamma < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("gamma, beta and lambda must be non-negative".into()));
        }
        if self.neg_ratio < 1 {
            return Err(Error::Config("neg_ratio must be at least 1".into()));
        }
        Ok(())
    }
}

/// Focal loss averaged over one modality's scores (`n × 1` or `1 × n`).
pub fn focal_loss(tape: &mut Tape, scores: Var, labels: &[u8], alpha: f64, gamma: f64) -> Result<Var> {
    let n = tape.value(scores).len();
    if n == 0 {
        return Err(Error::Invalid("focal loss over an empty sequence".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} scores", labels.len())));
    }
    let [r, c] = tape.shape(scores);
    let pos_w: Vec<f64> = labels.iter().map(|&y| if y == 1 { alpha } else { 0.0 }).collect();
    let neg_w: Vec<f64> = labels.iter().map(|&y| if y == 1 { 0.0 } else { 1.0 - alpha }).collect();
    let pos_w = tape.constant(Tensor::new(r, c, pos_w)?);
    let neg_w = tape.constant(Tensor::new(r, c, neg_w)?);

    let p = tape.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    let neg_p = tape.scale(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);

    // y = 1: α (1 − p)^γ · (−log p)
    let log_p = tape.log(p);
    let mod_pos = tape.powf(one_minus_p, gamma);
    let pos = tape.mul(mod_pos, log_p)?;
    let pos = tape.mul(pos, pos_w)?;
    // y = 0: (1 − α) p^γ · (−log(1 − p))
    let log_q = tape.log(one_minus_p);
    let mod_neg = tape.powf(p, gamma);
    let neg = tape.mul(mod_neg, log_q)?;
    let neg = tape.mul(neg, neg_w)?;

    let both = tape.add(pos, neg)?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Index sets for the intra-sample loss.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveSets {
    pub positive_frames: Vec<usize>,
    pub hard_negative_frames: Vec<usize>,
    pub positive_sentences: Vec<usize>,
    pub hard_negative_sentences: Vec<usize>,
}

/// Indices within `expansion` of any positive label.
pub fn expanded_labels(labels: &[u8], expansion: usize) -> Vec<bool> {
    let n = labels.len();
    let mut out = vec![false; n];
    for (i, _) in labels.iter().enumerate().filter(|(_, &y)| y == 1) {
        let lo = i.saturating_sub(expansion);
        let hi = (i + expansion).min(n.saturating_sub(1));
        out[lo..=hi].fill(true);
    }
    out
}

fn mine_one(scores: &[f64], labels: &[u8], ratio: usize, expansion: usize) -> (Vec<usize>, Vec<usize>) {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if positives.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let blocked = expanded_labels(labels, expansion);
    let mut eligible: Vec<usize> = (0..labels.len()).filter(|&i| !blocked[i]).collect();
    eligible.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    eligible.truncate(labels.len() / ratio);
    eligible.sort_unstable();
    (positives, eligible)
}

/// Positives are the labelled timesteps; hard negatives are the
/// `⌊len / ratio⌋` highest-scored timesteps outside the expanded labels
/// (ties to the lower index). A modality without positives yields empty sets.
pub fn select_contrastive_pairs(
    frame_scores: &[f64],
    frame_labels: &[u8],
    sentence_scores: &[f64],
    sentence_labels: &[u8],
    ratio: usize,
    expansion: usize,
) -> ContrastiveSets {
    let ratio = ratio.max(1);
    let (pf, hnf) = mine_one(frame_scores, frame_labels, ratio, expansion);
    let (ps, hns) = mine_one(sentence_scores, sentence_labels, ratio, expansion);
    ContrastiveSets { positive_frames: pf, hard_negative_frames: hnf, positive_sentences: ps, hard_negative_sentences: hns }
}

/// `exp(clamp(log τ))⁻¹` as a tape scalar.
pub fn inverse_temperature(tape: &mut Tape, log_tau: Var) -> Var {
    let clamped = tape.clamp(log_tau, MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    let neg = tape.scale(clamped, -1.0);
    tape.exp(neg)
}

/// Symmetric InfoNCE between matched rows of `clsv` and `clst` (`B × C`).
pub fn inter_sample_loss(tape: &mut Tape, clsv: Var, clst: Var, log_tau: Var) -> Result<Var> {
    let [b, _] = tape.shape(clsv);
    if b == 0 {
        return Err(Error::Invalid("inter-sample loss over an empty batch".into()));
    }
    if tape.shape(clst) != tape.shape(clsv) {
        return Err(Error::Shape("CLS blocks differ in shape".into()));
    }
    let inv_tau = inverse_temperature(tape, log_tau);
    let v = tape.l2_normalize(clsv);
    let t = tape.l2_normalize(clst);
    let sim = tape.matmul_nt(v, t)?;
    let logits = tape.scale_by(sim, inv_tau)?;
    let diag: Vec<usize> = (0..b).map(|j| j * b + j).collect();
    let matched = tape.gather_elems(logits, &diag)?;

    let lse_v2t = tape.logsumexp_rows(logits, None)?;
    let logits_t = tape.transpose(logits);
    let lse_t2v = tape.logsumexp_rows(logits_t, None)?;

    let v2t = tape.sub(lse_v2t, matched)?;
    let t2v = tape.sub(lse_t2v, matched)?;
    let v2t = tape.mean(v2t);
    let t2v = tape.mean(t2v);
    tape.add(v2t, t2v)
}

/// Mean over anchor/positive pairs of the InfoNCE term with a shared set of
/// negatives: `−log(e^{a·p/τ} / (e^{a·p/τ} + Σₙ e^{a·n/τ}))`.
fn directional_term(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    negatives: Option<Var>,
    inv_tau: Var,
) -> Result<Var> {
    let [na, _] = tape.shape(anchors);
    let [np, _] = tape.shape(positives);
    let pos = tape.matmul_nt(anchors, positives)?;
    let pos = tape.scale_by(pos, inv_tau)?;
    let pair_flat: Vec<usize> = (0..na * np).collect();
    let pair_logits = tape.gather_elems(pos, &pair_flat)?;
    let rows = match negatives {
        Some(neg) => {
            let negs = tape.matmul_nt(anchors, neg)?;
            let negs = tape.scale_by(negs, inv_tau)?;
            let anchor_of_pair: Vec<usize> = (0..na).flat_map(|i| std::iter::repeat(i).take(np)).collect();
            let per_pair = tape.gather_rows(negs, &anchor_of_pair)?;
            tape.concat_cols(&[pair_logits, per_pair])?
        }
        None => pair_logits,
    };
    let lse = tape.logsumexp_rows(rows, None)?;
    let terms = tape.sub(lse, pair_logits)?;
    Ok(tape.mean(terms))
}

/// Intra-sample contrastive loss over rows of the fused features `z`.
/// Frame anchors use key sentences as positives and hard-negative frames as
/// negatives; sentence anchors the reverse.
pub fn intra_sample_loss(
    tape: &mut Tape,
    z: Var,
    sets: &ContrastiveSets,
    layout: &TokenLayout,
    log_tau: Var,
) -> Result<Var> {
    let pf = &sets.positive_frames;
    let ps = &sets.positive_sentences;
    if pf.is_empty() || ps.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let inv_tau = inverse_temperature(tape, log_tau);
    let rows_of = |tape: &mut Tape, idx: &[usize], frame: bool| -> Result<Option<Var>> {
        if idx.is_empty() {
            return Ok(None);
        }
        let pos: Vec<usize> =
            idx.iter().map(|&i| if frame { layout.frame(i) } else { layout.sentence(i) }).collect();
        let g = tape.gather_rows(z, &pos)?;
        Ok(Some(tape.l2_normalize(g)))
    };
    let f_pos = rows_of(tape, pf, true)?.expect("non-empty");
    let s_pos = rows_of(tape, ps, false)?.expect("non-empty");
    let f_neg = rows_of(tape, &sets.hard_negative_frames, true)?;
    let s_neg = rows_of(tape, &sets.hard_negative_sentences, false)?;

    let video = directional_term(tape, f_pos, s_pos, f_neg, inv_tau)?;
    let text = directional_term(tape, s_pos, f_pos, s_neg, inv_tau)?;
    tape.add(video, text)
}

/// `cls + β·inter + λ·intra`
pub fn total_loss(tape: &mut Tape, cls: Var, inter: Var, intra: Var, weights: &LossWeights) -> Result<Var> {
    let a = tape.scale(inter, weights.beta);
    let b = tape.scale(intra, weights.lambda);
    let s = tape.add(cls, a)?;
    tape.add(s, b)
}

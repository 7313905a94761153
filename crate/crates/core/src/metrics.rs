//! Evaluation metrics for video and text summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-annotator F1 scores are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Max,
    Mean,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown reduction {other:?}, expected max or mean"))),
        }
    }
}

/// Harmonic mean, 0 when either side is 0.
pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn overlap_f1(pred: &[bool], gt: &[bool]) -> f64 {
    let overlap = pred.iter().zip(gt).filter(|(a, b)| **a && **b).count() as f64;
    let np = pred.iter().filter(|&&v| v).count() as f64;
    let ng = gt.iter().filter(|&&v| v).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    f1_from(overlap / np, overlap / ng)
}

/// Duration-overlap F1 between a predicted frame mask and each annotator's.
pub fn keyshot_f1(pred: &[bool], gts: &[Vec<bool>], mode: Reduction) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::Invalid("keyshot_f1 needs at least one ground truth".into()));
    }
    let mut scores = Vec::with_capacity(gts.len());
    for gt in gts {
        if gt.len() != pred.len() {
            return Err(Error::Shape(format!("prediction has {} frames, ground truth {}", pred.len(), gt.len())));
        }
        scores.push(overlap_f1(pred, gt));
    }
    Ok(match mode {
        Reduction::Max => scores.iter().copied().fold(0.0, f64::max),
        Reduction::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

/// Boolean mask of length `n` with `indices` set.
pub fn mask_from_indices(n: usize, indices: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in indices {
        if i < n {
            m[i] = true;
        }
    }
    m
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("rank inputs differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Undefined("rank correlation needs at least 2 values".into()));
    }
    if a.iter().any(|v| v.is_nan()) || b.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("rank inputs contain NaN".into()));
    }
    Ok(())
}

// Number of tied pairs within runs of equal values of an already sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

// Merge sort counting inversions (strictly decreasing pairs).
fn count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's τ-b, O(n log n).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let n1 = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let joint = tied_pairs(&pairs);
    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(bs.len());
    let discordant = count_swaps(&mut bs, &mut buf);
    let n2 = tied_pairs(&bs);
    let n0 = n * (n - 1) / 2;
    if n1 == n0 || n2 == n0 {
        return Err(Error::Undefined("kendall tau of a constant vector".into()));
    }
    // concordant − discordant = n0 − n1 − n2 + joint − 2·discordant
    let num = n0 as f64 - n1 as f64 - n2 as f64 + joint as f64 - 2.0 * discordant as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `Undefined` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Lowercase, split on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matched: usize, cand: usize, reference: usize) -> Self {
        let precision = if cand == 0 { 0.0 } else { matched as f64 / cand as f64 };
        let recall = matched as f64 / reference as f64;
        Self { precision, recall, f1: f1_from(precision, recall) }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(Error::Invalid("rouge n must be at least 1".into()));
    }
    let rc = ngram_counts(reference, n);
    let ref_total: usize = rc.values().sum();
    if ref_total == 0 {
        return Err(Error::Invalid(format!("reference has no {n}-grams")));
    }
    let cc = ngram_counts(cand, n);
    let cand_total: usize = cc.values().sum();
    let matched = cc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
    Ok(Prf::from_counts(matched, cand_total, ref_total))
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Result<Prf> {
    if reference.is_empty() {
        return Err(Error::Invalid("empty reference".into()));
    }
    Ok(Prf::from_counts(lcs_len(cand, reference), cand.len(), reference.len()))
}

/// Cosine between the mean-pooled rows selected by `pred` and by `gt`.
pub fn cosine_summary_sim(features: &crate::numerics::Tensor, pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Invalid("cosine similarity needs non-empty selections".into()));
    }
    let pool = |sel: &[usize]| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; features.cols()];
        for &i in sel {
            if i >= features.rows() {
                return Err(Error::Shape(format!("frame {i} out of range {}", features.rows())));
            }
            for (a, v) in acc.iter_mut().zip(features.row(i)) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|v| v / sel.len() as f64).collect())
    };
    let (p, g) = (pool(pred)?, pool(gt)?);
    let dot: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ng = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || ng == 0.0 {
        return Err(Error::Undefined("cosine of a zero vector".into()));
    }
    Ok((dot / (np * ng)).clamp(-1.0, 1.0))
}

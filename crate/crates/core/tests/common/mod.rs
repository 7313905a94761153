//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use a2summ::alignmask::{build_mask, SegmentWindow, TokenLayout};
use a2summ::model::{embed_inputs, transformer_block, ModelConfig, ModelParams};
use a2summ::numerics::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Layout [CLSV, F0..Fn, CLST, S0..Sm, pad]; the rules written out directly.
pub fn mask_expected(n: usize, m: usize, windows: &[SegmentWindow], q: usize, k: usize) -> bool {
    let real = n + m + 2;
    if q >= real || k >= real {
        return false;
    }
    let video = |p: usize| p <= n;
    let (vq, vk) = (video(q), video(k));
    if vq && vk {
        return n > 0;
    }
    if !vq && !vk {
        return m > 0;
    }
    let (v, t) = if vq { (q, k) } else { (k, q) };
    if v == 0 || t == n + 1 {
        return false;
    }
    let (frame, sentence) = (v - 1, t - n - 2);
    windows.iter().any(|w| w.sentence == sentence && w.start <= frame && frame < w.end)
}

// Straight application of the selection rules.
pub fn select_oracle(scores: &[f64], labels: &[u8], r: usize, e: usize) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return (pos, Vec::new());
    }
    let blocked = |j: usize| pos.iter().any(|&i| i.abs_diff(j) <= e);
    let mut eligible: Vec<usize> = (0..n).filter(|&j| !blocked(j)).collect();
    let k = (n / r).min(eligible.len());
    let mut chosen = Vec::new();
    for _ in 0..k {
        let mut best = 0;
        for (idx, &j) in eligible.iter().enumerate() {
            if scores[j] > scores[eligible[best]] {
                best = idx;
            }
        }
        chosen.push(eligible.remove(best));
    }
    chosen.sort_unstable();
    (pos, chosen)
}

// Exhaustive search with the documented tie rules: most value, then the
// smaller duration, then the lexicographically smallest index set.
pub fn knapsack_brute_force(values: &[f64], durations: &[usize], budget: usize) -> Vec<usize> {
    let n = values.len();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let d: usize = set.iter().map(|&i| durations[i]).sum();
        if d > budget {
            continue;
        }
        let v: f64 = set.iter().map(|&i| values[i]).sum();
        let better = match &best {
            None => true,
            Some((bv, bd, bs)) => {
                if (v - bv).abs() > 1e-12 {
                    v > *bv
                } else if d != *bd {
                    d < *bd
                } else {
                    set < *bs
                }
            }
        };
        if better {
            best = Some((v, d, set));
        }
    }
    best.unwrap().2
}

// Tie-aware pair counting.
pub fn tau_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
            let b = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
            if a == 0.0 && b == 0.0 {
                continue;
            } else if a == 0.0 {
                tx += 1.0;
            } else if b == 0.0 {
                ty += 1.0;
            } else if a == b {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    let denom = ((c + d + tx) * (c + d + ty)).sqrt();
    (denom > 0.0).then(|| (c - d) / denom)
}

pub fn ranks_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds a random one-block model and layout from `seed`, perturbs every
/// token a random query may not attend to, and returns how far that query's
/// block output moved (0 when nothing is forbidden).
pub fn forbidden_token_shift(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig { width: 8, heads: 2, layers: 1, video_dim: 4, text_dim: 3, dropout: 0.0, ..ModelConfig::default() };
    let params = ModelParams::init(&cfg, &mut rng);
    let (n, m) = (rng.gen_range(2..10), rng.gen_range(2..6));
    let mut windows = Vec::new();
    let mut start = 0;
    for k in 0..m {
        let end = (start + rng.gen_range(0..4)).min(n);
        windows.push(SegmentWindow::new(k, start, end));
        start = end;
    }
    let layout = TokenLayout::new(n, m);
    let mask = build_mask(&layout, &windows).unwrap();
    let frames = rand_tensor(&mut rng, n, 4);
    let sentences = rand_tensor(&mut rng, m, 3);
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let p = params.on_tape(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = transformer_block(&mut tape, &p.blocks[0], &cfg, &layout, xv, &mask, &mut None).unwrap();
        tape.value(out).clone()
    };
    let mut tape = Tape::new();
    let p = params.on_tape(&mut tape, false);
    let (fv, sv) = (tape.constant(frames), tape.constant(sentences));
    let x = embed_inputs(&mut tape, &p, &cfg, &layout, fv, sv, &windows).unwrap();
    let x = tape.value(x).clone();
    let base = run(&x);
    let q = rng.gen_range(0..layout.real_len());
    let mut y = x.clone();
    for k in (0..layout.real_len()).filter(|&k| !mask.get(q, k)) {
        for c in 0..cfg.width {
            y.set(k, c, y.get(k, c) + rng.gen_range(-5.0..5.0));
        }
    }
    let moved = run(&y);
    (0..cfg.width).map(|c| (moved.get(q, c) - base.get(q, c)).abs()).fold(0.0, f64::max)
}

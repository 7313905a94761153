//! Numerical self-checks: finite-difference gradient checks for every
//! primitive and for the full training objective, brute-force comparisons
//! for the attention mask and the knapsack, and metric goldens.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignmask::{build_mask, SegmentWindow, Token, TokenLayout};
use crate::error::Result;
use crate::losses::{focal_loss, inter_sample_loss, LossWeights};
use crate::metrics::{kendall_tau, rouge_l, rouge_n, spearman_rho, tokenize};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{grad_check, Tape, Tensor, Var};
use crate::summarize::knapsack_select;

/// Gradient checks must stay below this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Objective = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// A named scalar function of some inputs, for gradient checking.
pub struct GradCase {
    pub name: &'static str,
    pub f: Objective,
    pub inputs: Vec<Tensor>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

// Contracts an output with fixed random weights so every entry matters.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let [r, c] = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, r, c, -1.0, 1.0));
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

macro_rules! case {
    ($name:expr, [$($input:expr),*], |$t:ident, $x:ident| $body:expr) => {
        GradCase {
            name: $name,
            f: Box::new(move |$t: &mut Tape, $x: &[Var]| -> Result<Var> {
                let out = $body?;
                weighted_sum($t, out, 99)
            }),
            inputs: vec![$($input),*],
        }
    };
}

/// One case per differentiable primitive.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |rows, cols| rand_tensor(&mut rng, rows, cols, -1.0, 1.0);
    let a34 = r(3, 4);
    let b45 = r(4, 5);
    let c54 = r(5, 4);
    let d34 = r(3, 4);
    let e34 = r(3, 4);
    let row4 = r(1, 4);
    let s11 = r(1, 1);
    let g14 = r(1, 4);
    let bt14 = r(1, 4);
    let x34 = r(3, 4);
    let x24 = r(2, 4);
    let y34 = r(3, 4);
    let z34 = r(3, 4);
    let l33 = r(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let pos34 = rand_tensor(&mut rng, 3, 4, 0.2, 2.0);
    let clamp34 = Tensor::new(3, 4, vec![-0.9, -0.3, 0.2, 0.6, 0.1, -0.45, 0.35, 0.9, -0.7, 0.05, 0.42, -0.2]).expect("shape");
    let mask: Arc<Vec<bool>> =
        Arc::new(vec![true, false, true, false, false, false, true, true, true]);
    let mask2 = Arc::clone(&mask);
    vec![
        case!("matmul", [a34.clone(), b45.clone()], |t, x| t.matmul(x[0], x[1])),
        case!("matmul_nt", [a34.clone(), c54.clone()], |t, x| t.matmul_nt(x[0], x[1])),
        case!("transpose", [a34.clone()], |t, x| Ok::<_, crate::Error>(t.transpose(x[0]))),
        case!("add", [a34.clone(), d34.clone()], |t, x| t.add(x[0], x[1])),
        case!("sub", [a34.clone(), d34.clone()], |t, x| t.sub(x[0], x[1])),
        case!("add_row", [a34.clone(), row4.clone()], |t, x| t.add_row(x[0], x[1])),
        case!("mul", [a34.clone(), e34.clone()], |t, x| t.mul(x[0], x[1])),
        case!("scale_by", [a34.clone(), s11.clone()], |t, x| t.scale_by(x[0], x[1])),
        case!("scale", [a34.clone()], |t, x| Ok::<_, crate::Error>(t.scale(x[0], -1.7))),
        case!("add_scalar", [a34.clone()], |t, x| Ok::<_, crate::Error>(t.add_scalar(x[0], 0.3))),
        case!("exp", [a34.clone()], |t, x| Ok::<_, crate::Error>(t.exp(x[0]))),
        case!("log", [pos34.clone()], |t, x| Ok::<_, crate::Error>(t.log(x[0]))),
        case!("sigmoid", [a34.clone()], |t, x| Ok::<_, crate::Error>(t.sigmoid(x[0]))),
        case!("gelu", [a34.clone()], |t, x| Ok::<_, crate::Error>(t.gelu(x[0]))),
        case!("powf", [pos34.clone()], |t, x| Ok::<_, crate::Error>(t.powf(x[0], 2.5))),
        case!("clamp", [clamp34], |t, x| Ok::<_, crate::Error>(t.clamp(x[0], -0.5, 0.5))),
        case!("layer_norm", [x34.clone(), g14, bt14], |t, x| t.layer_norm(x[0], x[1], x[2])),
        case!("l2_normalize", [y34.clone()], |t, x| Ok::<_, crate::Error>(t.l2_normalize(x[0]))),
        case!("gather_rows", [a34.clone()], |t, x| t.gather_rows(x[0], &[2, 0, 2, 1])),
        case!("gather_elems", [a34.clone()], |t, x| t.gather_elems(x[0], &[0, 5, 11, 5])),
        case!("slice_cols", [a34.clone()], |t, x| t.slice_cols(x[0], 1, 3)),
        case!("concat_rows", [a34.clone(), x24], |t, x| t.concat_rows(&[x[0], x[1]])),
        case!("concat_cols", [a34.clone(), z34], |t, x| t.concat_cols(&[x[0], x[1]])),
        case!("masked_softmax", [l33.clone()], |t, x| t.masked_softmax(x[0], Arc::clone(&mask))),
        case!("logsumexp_rows", [l33], |t, x| t.logsumexp_rows(x[0], Some(Arc::clone(&mask2)))),
        case!("masked_mean_rows", [a34.clone()], |t, x| t.masked_mean_rows(x[0], &[0, 2])),
        case!("sum", [a34], |t, x| Ok::<_, crate::Error>(t.sum(x[0]))),
    ]
}

/// Tiny model and a two-sample batch for checking the whole objective.
pub fn toy_objective_setup(seed: u64) -> (ModelConfig, ModelParams<Tensor>, Vec<crate::data::SampleRecord>) {
    let cfg = ModelConfig {
        width: 8,
        heads: 2,
        layers: 1,
        video_dim: 3,
        text_dim: 3,
        max_positions: 8,
        max_segments: 4,
        dropout: 0.0,
        alignment: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(&cfg, &mut rng);
    let mk = |id: &str, n: usize, windows: Vec<SegmentWindow>, fl: Vec<u8>, sl: Vec<u8>, rng: &mut ChaCha8Rng| {
        crate::data::SampleRecord {
            id: id.into(),
            frame_features: rand_tensor(rng, n, 3, -1.0, 1.0),
            sentence_features: rand_tensor(rng, sl.len(), 3, -1.0, 1.0),
            windows,
            frame_labels: fl,
            sentence_labels: sl,
            annotator_scores: None,
            segmentation: None,
            sentences_text: None,
            gt_summary_text: None,
        }
    };
    let s0 = mk(
        "toy-0",
        6,
        vec![SegmentWindow::new(0, 0, 2), SegmentWindow::new(1, 2, 4), SegmentWindow::new(2, 4, 6)],
        vec![0, 0, 1, 1, 0, 0],
        vec![0, 1, 0],
        &mut rng,
    );
    let s1 = mk(
        "toy-1",
        5,
        vec![SegmentWindow::new(0, 0, 3), SegmentWindow::new(1, 3, 5)],
        vec![1, 1, 1, 0, 0],
        vec![1, 0],
        &mut rng,
    );
    (cfg, params, vec![s0, s1])
}

/// Relative error of the full objective's gradient with respect to every
/// model parameter.
pub fn objective_grad_error(seed: u64) -> Result<f64> {
    let (cfg, params, samples) = toy_objective_setup(seed);
    let weights = LossWeights { beta: 0.5, lambda: 0.7, neg_ratio: 2, expansion: 0, ..LossWeights::default() };
    let names: Vec<String> = params.entries().iter().map(|(n, _)| n.clone()).collect();
    let inputs: Vec<Tensor> = params.entries().into_iter().map(|(_, t)| t.clone()).collect();
    let f = move |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut i = 0;
        let p = params.map(|_, _| {
            i += 1;
            vars[i - 1]
        });
        let refs: Vec<&crate::data::SampleRecord> = samples.iter().collect();
        Ok(crate::train::batch_loss(tape, &p, &cfg, &weights, &refs, None)?.total)
    };
    debug_assert_eq!(names.len(), inputs.len());
    grad_check(f, &inputs, FD_STEP)
}

/// Gradient checks for every primitive plus the full objective.
pub fn gradient_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for case in primitive_cases(17) {
        let res = grad_check(&case.f, &case.inputs, FD_STEP);
        out.push(grad_outcome(format!("grad {}", case.name), res));
    }
    out.push(grad_outcome("grad full objective".into(), objective_grad_error(5)));
    out
}

fn grad_outcome(name: String, res: Result<f64>) -> Check {
    match res {
        Ok(err) => Check { name, passed: err < GRAD_TOLERANCE, detail: format!("max rel err {err:.2e}") },
        Err(e) => Check { name, passed: false, detail: e.to_string() },
    }
}

/// Mask entry straight from the permission rules.
pub fn mask_oracle(layout: &TokenLayout, windows: &[SegmentWindow], q: usize, k: usize) -> bool {
    let (Some(a), Some(b)) = (layout.token(q), layout.token(k)) else {
        return false;
    };
    let has = |t: Token| match t {
        Token::ClsVideo | Token::Frame(_) => layout.frames() > 0,
        Token::ClsText | Token::Sentence(_) => layout.sentences() > 0,
    };
    if a.modality() == b.modality() {
        return has(a);
    }
    let covers = |f: usize, s: usize| windows.iter().any(|w| w.sentence == s && w.contains(f));
    match (a, b) {
        (Token::Frame(f), Token::Sentence(s)) | (Token::Sentence(s), Token::Frame(f)) => covers(f, s),
        _ => false,
    }
}

/// Random valid windows for an `n`-frame, `m`-sentence layout.
pub fn random_windows(rng: &mut impl Rng, n: usize, m: usize) -> Vec<SegmentWindow> {
    let mut ws = Vec::new();
    for k in 0..m {
        if rng.gen_bool(0.8) {
            let a = rng.gen_range(0..=n);
            let b = rng.gen_range(0..=n);
            ws.push(SegmentWindow::new(k, a.min(b), a.max(b)));
        }
    }
    ws.sort_by_key(|w| w.start);
    ws
}

fn mask_check(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..trials {
        let (n, m) = (rng.gen_range(0..=12), rng.gen_range(0..=12));
        let windows = random_windows(&mut rng, n, m);
        let pad = rng.gen_range(0..3);
        let layout = TokenLayout::with_padding(n, m, n + m + 2 + pad).expect("valid padding");
        let mask = match build_mask(&layout, &windows) {
            Ok(mk) => mk,
            Err(e) => return Check { name: "mask brute force".into(), passed: false, detail: e.to_string() },
        };
        for q in 0..layout.pad_len() {
            for k in 0..layout.pad_len() {
                if mask.get(q, k) != mask_oracle(&layout, &windows, q, k) {
                    return Check {
                        name: "mask brute force".into(),
                        passed: false,
                        detail: format!("trial {t}: entry ({q},{k}) differs for N={n} M={m}"),
                    };
                }
            }
        }
    }
    Check { name: "mask brute force".into(), passed: true, detail: format!("{trials} random layouts") }
}

/// Best `(value, duration, set)` by enumerating all subsets, with the same
/// tie rules as the dynamic program.
pub fn knapsack_oracle(values: &[f64], durations: &[usize], budget: usize) -> (f64, usize, Vec<usize>) {
    let n = values.len();
    let mut best = (0.0, 0usize, Vec::new());
    for mask in 0u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let d: usize = set.iter().map(|&i| durations[i]).sum();
        if d > budget {
            continue;
        }
        let v: f64 = set.iter().map(|&i| values[i]).sum();
        let better = if (v - best.0).abs() > crate::summarize::VALUE_TIE_EPS {
            v > best.0
        } else if d != best.1 {
            d < best.1
        } else {
            set < best.2
        };
        if better {
            best = (v, d, set);
        }
    }
    best
}

fn knapsack_check(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..trials {
        let n = rng.gen_range(1..=12);
        let values: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 10.0).collect();
        let durations: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=8)).collect();
        let budget = rng.gen_range(0..=30);
        let got = knapsack_select(&values, &durations, budget).expect("valid instance");
        let (_, _, want) = knapsack_oracle(&values, &durations, budget);
        if got.segments != want {
            return Check {
                name: "knapsack brute force".into(),
                passed: false,
                detail: format!("trial {t}: {:?} vs oracle {want:?}", got.segments),
            };
        }
    }
    Check { name: "knapsack brute force".into(), passed: true, detail: format!("{trials} random instances") }
}

fn golden(name: &str, got: f64, want: f64, tol: f64) -> Check {
    Check { name: name.into(), passed: (got - want).abs() <= tol, detail: format!("got {got:.9}, want {want:.9}") }
}

fn metric_goldens() -> Result<Vec<Check>> {
    let r1 = rouge_n(&tokenize("the cat sat"), &tokenize("the cat"), 1)?;
    let rl = rouge_l(&tokenize("a b c d"), &tokenize("a c d"))?;
    let tau = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])?;
    let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0])?;
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::column(&[0.5]));
    let focal = focal_loss(&mut tape, p, &[1], 0.25, 2.0)?;
    let v = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?);
    let log_tau = tape.constant(Tensor::scalar(0.0));
    let inter = inter_sample_loss(&mut tape, v, v, log_tau)?;
    Ok(vec![
        golden("rouge-1 f1", r1.f1, 0.8, 1e-12),
        golden("rouge-l f1", rl.f1, 6.0 / 7.0, 1e-9),
        golden("kendall tau", tau, 4.0 / 6.0, 1e-12),
        golden("spearman rho", rho, -1.0, 1e-12),
        golden("focal loss", tape.value(focal).item(), 0.0625 * 2f64.ln(), 1e-12),
        golden("inter-sample loss", tape.value(inter).item(), 2.0 * (-1f64).exp().ln_1p(), 1e-12),
    ])
}

/// Every check, in a fixed order, on the current thread.
pub fn run_all() -> Vec<Check> {
    let mut out = gradient_checks();
    out.push(mask_check(300));
    out.push(knapsack_check(300));
    match metric_goldens() {
        Ok(g) => out.extend(g),
        Err(e) => out.push(Check { name: "metric goldens".into(), passed: false, detail: e.to_string() }),
    }
    out
}

use rand::{Rng, RngCore};

use super::{BlockParams, Ffn, ModelConfig, ModelParams};
use crate::alignmask::{build_mask, global_mask, segment_ids, AlignmentMask, SegmentWindow, TokenLayout};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Training-time dropout; absent at evaluation.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let [r, c] = tape.shape(x);
        let keep = 1.0 / (1.0 - self.rate);
        let data = (0..r * c).map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep }).collect();
        let m = tape.constant(Tensor::new(r, c, data)?);
        tape.mul(x, m)
    }
}

fn maybe_dropout(tape: &mut Tape, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub layout: TokenLayout,
    /// Fused token features, `pad_len × C`.
    pub z: Var,
    /// `N × 1`
    pub frame_scores: Var,
    /// `M × 1`
    pub sentence_scores: Var,
    pub cls_video: Var,
    pub cls_text: Var,
}

/// Project features, prepend CLS tokens, add position and segment
/// embeddings, and pad with zero rows up to `layout.pad_len()`.
pub fn embed_inputs(
    tape: &mut Tape,
    p: &ModelParams<Var>,
    cfg: &ModelConfig,
    layout: &TokenLayout,
    frames: Var,
    sentences: Var,
    windows: &[SegmentWindow],
) -> Result<Var> {
    let (n, m) = (layout.frames(), layout.sentences());
    if n > cfg.max_positions || m > cfg.max_positions {
        return Err(Error::Config(format!(
            "sequence of {n} frames / {m} sentences exceeds max_positions {}",
            cfg.max_positions
        )));
    }
    let fv = tape.matmul(frames, p.video_proj_w)?;
    let fv = tape.add_row(fv, p.video_proj_b)?;
    let ft = tape.matmul(sentences, p.text_proj_w)?;
    let ft = tape.add_row(ft, p.text_proj_b)?;
    let x = tape.concat_rows(&[p.cls_video, fv, p.cls_text, ft])?;

    let positions: Vec<usize> = std::iter::once(0).chain(1..=n).chain(std::iter::once(0)).chain(1..=m).collect();
    let pos = tape.gather_rows(p.position, &positions)?;
    let x = tape.add(x, pos)?;

    let seg_ids = if cfg.alignment { segment_ids(layout, windows) } else { vec![0; layout.real_len()] };
    if let Some(&bad) = seg_ids.iter().find(|&&id| id >= cfg.max_segments) {
        return Err(Error::Config(format!("segment id {bad} exceeds max_segments {}", cfg.max_segments)));
    }
    let seg = tape.gather_rows(p.segment, &seg_ids)?;
    let x = tape.add(x, seg)?;

    let pad = layout.pad_len() - layout.real_len();
    if pad == 0 {
        return Ok(x);
    }
    let zeros = tape.constant(Tensor::zeros(pad, cfg.width));
    tape.concat_rows(&[x, zeros])
}

fn ffn(tape: &mut Tape, f: &Ffn<Var>, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    let h = tape.matmul(x, f.w1)?;
    let h = tape.add_row(h, f.b1)?;
    let h = tape.gelu(h);
    let h = maybe_dropout(tape, h, dropout)?;
    let o = tape.matmul(h, f.w2)?;
    tape.add_row(o, f.b2)
}

/// One pre-norm block: masked multi-head self-attention with residual, then
/// the video expert on `[CLSV, frames]` rows and the text expert on
/// `[CLST, sentences]` rows, again with residual. Padding rows pass through.
pub fn transformer_block(
    tape: &mut Tape,
    b: &BlockParams<Var>,
    cfg: &ModelConfig,
    layout: &TokenLayout,
    x: Var,
    mask: &AlignmentMask,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Var> {
    if mask.len() != tape.shape(x)[0] {
        return Err(Error::Shape(format!("mask {} for {} tokens", mask.len(), tape.shape(x)[0])));
    }
    let h = tape.layer_norm(x, b.ln1_gamma, b.ln1_beta)?;
    let q = tape.matmul(h, b.w_q)?;
    let k = tape.matmul(h, b.w_k)?;
    let v = tape.matmul(h, b.w_v)?;
    let dh = cfg.head_width();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let (lo, hi) = (head * dh, (head + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let logits = tape.matmul_nt(qh, kh)?;
        let logits = tape.scale(logits, scale);
        let attn = tape.masked_softmax(logits, mask.bits())?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let attn = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let o = tape.matmul(attn, b.w_o)?;
    let o = maybe_dropout(tape, o, dropout)?;
    let x = tape.add(x, o)?;

    let h = tape.layer_norm(x, b.ln2_gamma, b.ln2_beta)?;
    let split = layout.cls_text();
    let real = layout.real_len();
    let hv = tape.slice_rows(h, 0, split)?;
    let ht = tape.slice_rows(h, split, real)?;
    let ov = ffn(tape, &b.video_ffn, hv, dropout)?;
    let ot = ffn(tape, &b.text_ffn, ht, dropout)?;
    let mut parts = vec![ov, ot];
    if layout.pad_len() > real {
        parts.push(tape.constant(Tensor::zeros(layout.pad_len() - real, cfg.width)));
    }
    let update = tape.concat_rows(&parts)?;
    tape.add(x, update)
}

/// Sigmoid heads over frame rows and sentence rows of `z`.
pub fn predict_scores(tape: &mut Tape, p: &ModelParams<Var>, layout: &TokenLayout, z: Var) -> Result<(Var, Var)> {
    let fr = layout.frame_positions();
    let frames = tape.slice_rows(z, fr.start, fr.end)?;
    let sr = layout.sentence_positions();
    let sents = tape.slice_rows(z, sr.start, sr.end)?;
    let pf = tape.matmul(frames, p.frame_head_w)?;
    let pf = tape.add_row(pf, p.frame_head_b)?;
    let ps = tape.matmul(sents, p.sentence_head_w)?;
    let ps = tape.add_row(ps, p.sentence_head_b)?;
    Ok((tape.sigmoid(pf), tape.sigmoid(ps)))
}

/// Full forward pass on a tape. `pad_len` defaults to the real token count.
#[allow(clippy::too_many_arguments)]
pub fn forward_tape(
    tape: &mut Tape,
    p: &ModelParams<Var>,
    cfg: &ModelConfig,
    frames: &Tensor,
    sentences: &Tensor,
    windows: &[SegmentWindow],
    pad_len: Option<usize>,
    mut dropout: Option<Dropout<'_>>,
) -> Result<TapeForward> {
    if frames.cols() != cfg.video_dim || sentences.cols() != cfg.text_dim {
        return Err(Error::Shape(format!(
            "feature widths {}/{} but model expects {}/{}",
            frames.cols(),
            sentences.cols(),
            cfg.video_dim,
            cfg.text_dim
        )));
    }
    let (n, m) = (frames.rows(), sentences.rows());
    let layout = match pad_len {
        Some(len) => TokenLayout::with_padding(n, m, len)?,
        None => TokenLayout::new(n, m),
    };
    let mask = if cfg.alignment { build_mask(&layout, windows)? } else { global_mask(&layout) };
    let fv = tape.constant(frames.clone());
    let sv = tape.constant(sentences.clone());
    let mut x = embed_inputs(tape, p, cfg, &layout, fv, sv, windows)?;
    for b in &p.blocks {
        x = transformer_block(tape, b, cfg, &layout, x, &mask, &mut dropout)?;
    }
    let (frame_scores, sentence_scores) = predict_scores(tape, p, &layout, x)?;
    let cls_video = tape.slice_rows(x, layout.cls_video(), layout.cls_video() + 1)?;
    let cls_text = tape.slice_rows(x, layout.cls_text(), layout.cls_text() + 1)?;
    Ok(TapeForward { layout, z: x, frame_scores, sentence_scores, cls_video, cls_text })
}

/// Plain values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub z: Tensor,
    pub frame_scores: Vec<f64>,
    pub sentence_scores: Vec<f64>,
    pub cls_video: Vec<f64>,
    pub cls_text: Vec<f64>,
}

// Keeps scores strictly inside (0, 1) even where the sigmoid rounds to 1.
const SCORE_EPS: f64 = 1e-12;

/// Inference-mode forward pass (no dropout, no gradients).
pub fn forward(
    params: &ModelParams<Tensor>,
    cfg: &ModelConfig,
    frames: &Tensor,
    sentences: &Tensor,
    windows: &[SegmentWindow],
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let p = params.on_tape(&mut tape, false);
    let out = forward_tape(&mut tape, &p, cfg, frames, sentences, windows, None, None)?;
    let clamp = |v: &f64| v.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    Ok(ForwardOutput {
        z: tape.value(out.z).clone(),
        frame_scores: tape.value(out.frame_scores).data().iter().map(clamp).collect(),
        sentence_scores: tape.value(out.sentence_scores).data().iter().map(clamp).collect(),
        cls_video: tape.value(out.cls_video).data().to_vec(),
        cls_text: tape.value(out.cls_text).data().to_vec(),
    })
}

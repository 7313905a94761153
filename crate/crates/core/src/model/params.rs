use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::numerics::{Tape, Tensor, Var};

/// Two-layer feed-forward expert, `C → 4C → C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ffn<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
    pub video_ffn: Ffn<T>,
    pub text_ffn: Ffn<T>,
}

/// Every learnable tensor of the network. Generic so the same structure can
/// hold shapes, values, tape handles or gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub video_proj_w: T,
    pub video_proj_b: T,
    pub text_proj_w: T,
    pub text_proj_b: T,
    pub cls_video: T,
    pub cls_text: T,
    pub position: T,
    pub segment: T,
    pub blocks: Vec<BlockParams<T>>,
    pub frame_head_w: T,
    pub frame_head_b: T,
    pub sentence_head_w: T,
    pub sentence_head_b: T,
    pub log_tau_inter: T,
    pub log_tau_intra: T,
}

impl<T> Ffn<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> Ffn<U> {
        Ffn {
            w1: f(&format!("{prefix}.w1"), &self.w1),
            b1: f(&format!("{prefix}.b1"), &self.b1),
            w2: f(&format!("{prefix}.w2"), &self.w2),
            b2: f(&format!("{prefix}.b2"), &self.b2),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.w1"), &mut self.w1);
        f(&format!("{prefix}.b1"), &mut self.b1);
        f(&format!("{prefix}.w2"), &mut self.w2);
        f(&format!("{prefix}.b2"), &mut self.b2);
    }
}

impl<T> BlockParams<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> BlockParams<U> {
        BlockParams {
            ln1_gamma: f(&format!("{prefix}.ln1_gamma"), &self.ln1_gamma),
            ln1_beta: f(&format!("{prefix}.ln1_beta"), &self.ln1_beta),
            w_q: f(&format!("{prefix}.w_q"), &self.w_q),
            w_k: f(&format!("{prefix}.w_k"), &self.w_k),
            w_v: f(&format!("{prefix}.w_v"), &self.w_v),
            w_o: f(&format!("{prefix}.w_o"), &self.w_o),
            ln2_gamma: f(&format!("{prefix}.ln2_gamma"), &self.ln2_gamma),
            ln2_beta: f(&format!("{prefix}.ln2_beta"), &self.ln2_beta),
            video_ffn: self.video_ffn.map(&format!("{prefix}.video_ffn"), f),
            text_ffn: self.text_ffn.map(&format!("{prefix}.text_ffn"), f),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.ln1_gamma"), &mut self.ln1_gamma);
        f(&format!("{prefix}.ln1_beta"), &mut self.ln1_beta);
        f(&format!("{prefix}.w_q"), &mut self.w_q);
        f(&format!("{prefix}.w_k"), &mut self.w_k);
        f(&format!("{prefix}.w_v"), &mut self.w_v);
        f(&format!("{prefix}.w_o"), &mut self.w_o);
        f(&format!("{prefix}.ln2_gamma"), &mut self.ln2_gamma);
        f(&format!("{prefix}.ln2_beta"), &mut self.ln2_beta);
        self.video_ffn.for_each_mut(&format!("{prefix}.video_ffn"), f);
        self.text_ffn.for_each_mut(&format!("{prefix}.text_ffn"), f);
    }
}

impl<T> ModelParams<T> {
    /// Structure-preserving map in canonical (checkpoint) order.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> ModelParams<U> {
        let f = &mut f;
        ModelParams {
            video_proj_w: f("video_proj_w", &self.video_proj_w),
            video_proj_b: f("video_proj_b", &self.video_proj_b),
            text_proj_w: f("text_proj_w", &self.text_proj_w),
            text_proj_b: f("text_proj_b", &self.text_proj_b),
            cls_video: f("cls_video", &self.cls_video),
            cls_text: f("cls_text", &self.cls_text),
            position: f("position", &self.position),
            segment: f("segment", &self.segment),
            blocks: self.blocks.iter().enumerate().map(|(i, b)| b.map(&format!("blocks.{i}"), f)).collect(),
            frame_head_w: f("frame_head_w", &self.frame_head_w),
            frame_head_b: f("frame_head_b", &self.frame_head_b),
            sentence_head_w: f("sentence_head_w", &self.sentence_head_w),
            sentence_head_b: f("sentence_head_b", &self.sentence_head_b),
            log_tau_inter: f("log_tau_inter", &self.log_tau_inter),
            log_tau_intra: f("log_tau_intra", &self.log_tau_intra),
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        let f = &mut f;
        f("video_proj_w", &mut self.video_proj_w);
        f("video_proj_b", &mut self.video_proj_b);
        f("text_proj_w", &mut self.text_proj_w);
        f("text_proj_b", &mut self.text_proj_b);
        f("cls_video", &mut self.cls_video);
        f("cls_text", &mut self.cls_text);
        f("position", &mut self.position);
        f("segment", &mut self.segment);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_mut(&format!("blocks.{i}"), f);
        }
        f("frame_head_w", &mut self.frame_head_w);
        f("frame_head_b", &mut self.frame_head_b);
        f("sentence_head_w", &mut self.sentence_head_w);
        f("sentence_head_b", &mut self.sentence_head_b);
        f("log_tau_inter", &mut self.log_tau_inter);
        f("log_tau_intra", &mut self.log_tau_intra);
    }

    /// `(name, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.map(|name, t| out.push((name.to_string(), t)));
        out
    }
}

impl ModelParams<[usize; 2]> {
    pub fn shapes(cfg: &ModelConfig) -> Self {
        let c = cfg.width;
        let hidden = 4 * c;
        let ffn = || Ffn { w1: [c, hidden], b1: [1, hidden], w2: [hidden, c], b2: [1, c] };
        ModelParams {
            video_proj_w: [cfg.video_dim, c],
            video_proj_b: [1, c],
            text_proj_w: [cfg.text_dim, c],
            text_proj_b: [1, c],
            cls_video: [1, c],
            cls_text: [1, c],
            position: [cfg.max_positions + 1, c],
            segment: [cfg.max_segments, c],
            blocks: (0..cfg.layers)
                .map(|_| BlockParams {
                    ln1_gamma: [1, c],
                    ln1_beta: [1, c],
                    w_q: [c, c],
                    w_k: [c, c],
                    w_v: [c, c],
                    w_o: [c, c],
                    ln2_gamma: [1, c],
                    ln2_beta: [1, c],
                    video_ffn: ffn(),
                    text_ffn: ffn(),
                })
                .collect(),
            frame_head_w: [c, 1],
            frame_head_b: [1, 1],
            sentence_head_w: [c, 1],
            sentence_head_b: [1, 1],
            log_tau_inter: [1, 1],
            log_tau_intra: [1, 1],
        }
    }
}

/// Initial temperature of both contrastive losses.
pub const INITIAL_TEMPERATURE: f64 = 0.07;

impl ModelParams<Tensor> {
    /// Random initialization, rounded to `f32` so a fresh model is exactly
    /// representable in a checkpoint.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let shapes = ModelParams::shapes(cfg);
        let embed = Normal::new(0.0, 0.02).expect("valid std");
        let out = shapes.map(|name, &[r, c]| {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            let mut t = if leaf.contains("gamma") {
                Tensor::full(r, c, 1.0)
            } else if leaf.contains("beta") || leaf.starts_with('b') || leaf.ends_with("_b") {
                Tensor::zeros(r, c)
            } else if leaf.starts_with("log_tau") {
                Tensor::scalar(INITIAL_TEMPERATURE.ln())
            } else if matches!(leaf, "cls_video" | "cls_text" | "position" | "segment") {
                let data = (0..r * c).map(|_| embed.sample(rng)).collect();
                Tensor::new(r, c, data).expect("shape")
            } else {
                // Xavier-normal for projection matrices.
                let std = (2.0 / (r + c) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("valid std");
                let data = (0..r * c).map(|_| dist.sample(rng)).collect();
                Tensor::new(r, c, data).expect("shape")
            };
            t.round_to_f32();
            t
        });
        out
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.rows(), t.cols()))
    }

    /// Register every tensor on `tape`, as trainable leaves or constants.
    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> ModelParams<Var> {
        self.map(|_, t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
    }

    pub fn num_values(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, t)| t.is_finite())
    }
}

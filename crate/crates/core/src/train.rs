//! Mini-batch training with AdamW and global-norm gradient clipping.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{make_batch, Dataset, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{predict, validation_f1, with_eval_pool};
use crate::losses::{focal_loss, inter_sample_loss, intra_sample_loss, select_contrastive_pairs, total_loss, LossWeights};
use crate::model::{forward_tape, Dropout, ModelConfig, ModelParams};
use crate::numerics::{Tape, Tensor, Var};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments with decoupled weight decay. The temperatures are not
/// decayed.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &ModelParams<Tensor>, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.entries().iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { learning_rate, weight_decay, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; `grads` are in canonical parameter order. Parameters are
    /// rounded to `f32` afterwards.
    pub fn update(&mut self, params: &mut ModelParams<Tensor>, grads: &[Tensor]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let (lr, wd) = (self.learning_rate, self.weight_decay);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.for_each_mut(|name, p| {
            let decay = if name.starts_with("log_tau") { 0.0 } else { wd };
            let (m, v, g) = (ms[i].data_mut(), vs[i].data_mut(), grads[i].data());
            for (((w, m), v), &g) in p.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let step = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                *w -= lr * (step + decay * *w);
            }
            p.round_to_f32();
            i += 1;
        });
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Loss terms of one batch, as tape handles.
pub struct BatchLoss {
    pub total: Var,
    pub cls: Var,
    pub inter: Var,
    pub intra: Var,
}

/// `Σ_b (cls_b + λ·intra_b) + β·inter` for one batch on `tape`.
/// `cls_b` sums the frame and sentence focal terms of sample `b`.
pub fn batch_loss(
    tape: &mut Tape,
    p: &ModelParams<Var>,
    cfg: &ModelConfig,
    weights: &LossWeights,
    samples: &[&SampleRecord],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchLoss> {
    let batch = make_batch(samples, None)?;
    let mut cls_terms = Vec::new();
    let mut intra_terms = Vec::new();
    let mut clsv = Vec::new();
    let mut clst = Vec::new();
    for s in samples {
        let dropout = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => Some(Dropout { rate: cfg.dropout, rng }),
            _ => None,
        };
        let out = forward_tape(
            tape,
            p,
            cfg,
            &s.frame_features,
            &s.sentence_features,
            &s.windows,
            Some(batch.pad_len),
            dropout,
        )?;
        cls_terms.push(focal_loss(tape, out.frame_scores, &s.frame_labels, weights.alpha, weights.gamma)?);
        if s.sentences() > 0 {
            cls_terms.push(focal_loss(tape, out.sentence_scores, &s.sentence_labels, weights.alpha, weights.gamma)?);
        }
        let sets = select_contrastive_pairs(
            tape.value(out.frame_scores).data(),
            &s.frame_labels,
            tape.value(out.sentence_scores).data(),
            &s.sentence_labels,
            weights.neg_ratio,
            weights.expansion,
        );
        intra_terms.push(intra_sample_loss(tape, out.z, &sets, &out.layout, p.log_tau_intra)?);
        clsv.push(out.cls_video);
        clst.push(out.cls_text);
    }
    let sum = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        let cat = tape.concat_rows(terms)?;
        Ok(tape.sum(cat))
    };
    let cls = sum(tape, &cls_terms)?;
    let intra = sum(tape, &intra_terms)?;
    let v = tape.concat_rows(&clsv)?;
    let t = tape.concat_rows(&clst)?;
    let inter = inter_sample_loss(tape, v, t, p.log_tau_inter)?;
    let total = total_loss(tape, cls, inter, intra, weights)?;
    Ok(BatchLoss { total, cls, inter, intra })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-sample mean of the classification term (0 at epoch 0).
    pub cls: f64,
    /// Per-batch mean of the inter-sample term.
    pub inter: f64,
    /// Per-sample mean of the intra-sample term.
    pub intra: f64,
    /// Per-sample mean of the weighted total.
    pub total: f64,
    pub val_frame_f1: f64,
    pub val_sentence_f1: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// Checkpoint-selection score.
    pub fn val_score(&self) -> f64 {
        0.5 * (self.val_frame_f1 + self.val_sentence_f1)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelConfig,
    pub initial: ModelParams<Tensor>,
    pub last: ModelParams<Tensor>,
    /// Parameters of the epoch with the best validation score (epoch 0
    /// counts); the last epoch when there is no validation split.
    pub best: ModelParams<Tensor>,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }
}

fn check_finite(tape: &Tape, v: Var, term: &'static str, epoch: usize, step: usize) -> Result<f64> {
    let x = tape.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { term, epoch, step })
    }
}

/// Trains on the dataset's train split, validating on its val split after
/// every epoch. Refuses datasets that loaded the test split.
/// `log` receives one JSON line per epoch, flushed immediately.
pub fn train(cfg: &RunConfig, data: &Dataset, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.loaded_splits().contains(&Split::Test) {
        return Err(Error::Invalid("training data must not include the test split".into()));
    }
    let model = cfg.model_config(data.header.video_dim, data.header.text_dim);
    model.validate()?;
    let weights = cfg.loss_weights();
    let train_set = data.split(Split::Train);
    let val_set = data.split(Split::Val);
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(Error::Invalid("no training samples".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = ModelParams::init(&model, &mut rng);
    let mut params = initial.clone();
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);
    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs + 1);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let start = Instant::now();

    let validate = |params: &ModelParams<Tensor>| -> Result<(f64, f64)> {
        if val_set.is_empty() {
            return Ok((0.0, 0.0));
        }
        let scores = with_eval_pool(|| predict(params, &model, &val_set))??;
        Ok(validation_f1(&scores, &val_set))
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..=cfg.epochs {
        let (mut cls, mut inter, mut intra, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0;
        if epoch > 0 {
            order.shuffle(&mut rng);
            for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let samples: Vec<&SampleRecord> = chunk.iter().map(|&i| train_set[i]).collect();
                let mut tape = Tape::new();
                let p = params.on_tape(&mut tape, true);
                let loss = batch_loss(&mut tape, &p, &model, &weights, &samples, Some(&mut rng))?;
                cls += check_finite(&tape, loss.cls, "classification", epoch, step)?;
                inter += check_finite(&tape, loss.inter, "inter-sample", epoch, step)?;
                intra += check_finite(&tape, loss.intra, "intra-sample", epoch, step)?;
                total += check_finite(&tape, loss.total, "total", epoch, step)?;
                batches += 1;
                let mut grads_store = tape.backward(loss.total)?;
                let mut grads: Vec<Tensor> = p
                    .entries()
                    .iter()
                    .zip(params.entries())
                    .map(|((_, &v), (_, t))| grads_store.take(v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
                    .collect();
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite { term: "gradient", epoch, step });
                }
                clip_global_norm(&mut grads, cfg.clip_norm);
                opt.update(&mut params, &grads);
            }
        }
        let (val_frame_f1, val_sentence_f1) = validate(&params)?;
        let n = train_set.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            cls: cls / n,
            inter: if batches > 0 { inter / batches as f64 } else { 0.0 },
            intra: intra / n,
            total: total / n,
            val_frame_f1,
            val_sentence_f1,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("serializable");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io("train log", e))?;
        }
        let improved = records.is_empty() || record.val_score() > records[best_epoch].val_score();
        if val_set.is_empty() || improved {
            best = params.clone();
            best_epoch = epoch;
        }
        records.push(record);
    }
    Ok(TrainOutcome { model, initial, last: params, best, best_epoch, records })
}

//! Synthetic aligned video/transcript data with planted key segments.
//!
//! Each sample's timeline is cut into `M` windows, one per sentence. Every
//! window draws a topic from a dataset-wide pool. Key windows add a shared
//! salient direction to both their frames and their sentence. Some non-key
//! windows are distractors that carry the salient direction in only one
//! modality, so neither modality alone identifies the key windows: a frame
//! is key exactly when it and its own sentence are both salient.
//! Optional mismatch windows are salient in both modalities but their
//! sentence talks about another topic than their frames; they are not key,
//! so telling them apart needs cross-modal topic agreement.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_dataset, Manifest, ManifestHeader, SampleRecord, Split};
use crate::alignmask::SegmentWindow;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::summarize::Segmentation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub dataset: String,
    /// Total samples; the remainder after `val_samples` and `test_samples`
    /// is the training split.
    pub samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub video_dim: usize,
    pub text_dim: usize,
    pub latent_dim: usize,
    /// Size of the topic pool shared by all samples.
    pub topics: usize,
    /// Fraction of windows that are key.
    pub key_fraction: f64,
    /// Fraction of non-key windows salient in video only (and again, in
    /// text only).
    pub distractor_fraction: f64,
    /// Fraction of non-key windows salient in both modalities whose
    /// sentence topic differs from the frames' topic.
    pub mismatch_fraction: f64,
    /// Length of the salient component.
    pub salience: f64,
    /// Per-timestep latent noise σ.
    pub noise: f64,
    pub annotators: usize,
    pub annotator_noise: f64,
    /// Shorten windows so that some frames belong to no sentence.
    pub gaps: bool,
    pub vocabulary: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            samples: 300,
            val_samples: 50,
            test_samples: 50,
            min_frames: 40,
            max_frames: 80,
            min_sentences: 6,
            max_sentences: 12,
            video_dim: 32,
            text_dim: 32,
            latent_dim: 16,
            topics: 24,
            key_fraction: 0.3,
            distractor_fraction: 0.3,
            mismatch_fraction: 0.0,
            salience: 1.0,
            noise: 0.1,
            annotators: 3,
            annotator_noise: 0.15,
            gaps: false,
            vocabulary: 400,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.samples == 0 {
            return err("samples must be positive".into());
        }
        if self.val_samples + self.test_samples > self.samples {
            return err(format!(
                "val_samples + test_samples ({}) exceed samples ({})",
                self.val_samples + self.test_samples,
                self.samples
            ));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return err(format!("frame range [{}, {}] is empty", self.min_frames, self.max_frames));
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return err(format!("sentence range [{}, {}] is empty", self.min_sentences, self.max_sentences));
        }
        let per_window = if self.gaps { 2 } else { 1 };
        if self.min_frames < self.max_sentences * per_window {
            return err(format!(
                "min_frames {} too small for {} windows of at least {per_window} frames",
                self.min_frames, self.max_sentences
            ));
        }
        if self.video_dim == 0 || self.text_dim == 0 || self.latent_dim < 2 || self.topics == 0 || self.vocabulary == 0 {
            return err("dimensions, topics and vocabulary must be positive (latent_dim ≥ 2)".into());
        }
        if !(0.0..=1.0).contains(&self.key_fraction) {
            return err(format!("key_fraction {} outside [0, 1]", self.key_fraction));
        }
        if !(0.0..=0.5).contains(&self.distractor_fraction) {
            return err(format!("distractor_fraction {} outside [0, 0.5]", self.distractor_fraction));
        }
        if !(0.0..=1.0).contains(&self.mismatch_fraction)
            || 2.0 * self.distractor_fraction + self.mismatch_fraction > 1.0
        {
            return err(format!(
                "mismatch_fraction {} outside [0, 1 - 2·distractor_fraction]",
                self.mismatch_fraction
            ));
        }
        if self.mismatch_fraction > 0.0 && self.topics < 2 {
            return err("mismatch windows need at least 2 topics".into());
        }
        for (name, v) in [("salience", self.salience), ("noise", self.noise), ("annotator_noise", self.annotator_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be a non-negative number"));
            }
        }
        Ok(())
    }

    pub fn train_samples(&self) -> usize {
        self.samples - self.val_samples - self.test_samples
    }
}

/// Dataset-wide latent structure.
struct World {
    salient: Vec<f64>,
    topics: Vec<Vec<f64>>,
    topic_words: Vec<Vec<String>>,
    proj_video: Tensor,
    proj_text: Tensor,
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl World {
    fn new(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.latent_dim;
        let mut salient = gaussian(rng, d);
        normalize(&mut salient);
        let topics = (0..cfg.topics)
            .map(|_| {
                let mut t = gaussian(rng, d);
                let along = dot(&t, &salient);
                t.iter_mut().zip(&salient).for_each(|(x, s)| *x -= along * s);
                normalize(&mut t);
                t
            })
            .collect();
        let topic_words = (0..cfg.topics)
            .map(|_| {
                let len = rng.gen_range(4..=8);
                (0..len).map(|_| format!("w{}", rng.gen_range(0..cfg.vocabulary))).collect()
            })
            .collect();
        let scale = 1.0 / (d as f64).sqrt();
        let mut proj = |rows: usize| {
            let data = gaussian(rng, rows * d).into_iter().map(|v| v * scale).collect();
            Tensor::new(d, rows, data).expect("shape")
        };
        let proj_video = proj(cfg.video_dim);
        let proj_text = proj(cfg.text_dim);
        Self { salient, topics, topic_words, proj_video, proj_text }
    }

    fn project(&self, latent: &[f64], video: bool) -> Vec<f64> {
        let p = if video { &self.proj_video } else { &self.proj_text };
        (0..p.cols()).map(|j| (0..p.rows()).map(|i| latent[i] * p.get(i, j)).sum::<f64>() as f32 as f64).collect()
    }
}

/// Unit feature-space directions of the salient component, per modality.
pub fn salient_directions(cfg: &GenConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::new(cfg, &mut rng);
    let mut v = world.project(&world.salient, true);
    let mut t = world.project(&world.salient, false);
    normalize(&mut v);
    normalize(&mut t);
    (v, t)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Key,
    VideoDistractor,
    TextDistractor,
    Mismatch,
    Plain,
}

fn partition(rng: &mut ChaCha8Rng, n: usize, m: usize, gaps: bool) -> Vec<SegmentWindow> {
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(m - 1).collect();
    cuts.sort_unstable();
    let bounds: Vec<usize> = std::iter::once(0).chain(cuts).chain(std::iter::once(n)).collect();
    bounds
        .windows(2)
        .enumerate()
        .map(|(k, b)| {
            let (start, mut end) = (b[0], b[1]);
            if gaps && end - start >= 2 && rng.gen_bool(0.5) {
                end -= rng.gen_range(1..=(end - start) / 2);
            }
            SegmentWindow::new(k, start, end)
        })
        .collect()
}

fn generate_one(cfg: &GenConfig, world: &World, id: String, seed: u64) -> SampleRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
    let n = rng.gen_range(cfg.min_frames.max(m)..=cfg.max_frames.max(m));
    let windows = partition(&mut rng, n, m, cfg.gaps);

    let keys = if cfg.key_fraction > 0.0 { ((cfg.key_fraction * m as f64).round() as usize).clamp(1, m) } else { 0 };
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut roles = vec![Role::Plain; m];
    let distractors = (cfg.distractor_fraction * (m - keys) as f64).round() as usize;
    let mismatches = if cfg.mismatch_fraction > 0.0 {
        // Rounded stochastically so small fractions still show up.
        let want = cfg.mismatch_fraction * (m - keys) as f64;
        let base = want.floor() as usize + rng.gen_bool(want.fract()) as usize;
        base.min(m - keys - 2 * distractors)
    } else {
        0
    };
    for (rank, &k) in order.iter().enumerate() {
        roles[k] = if rank < keys {
            Role::Key
        } else if rank < keys + distractors {
            Role::VideoDistractor
        } else if rank < keys + 2 * distractors {
            Role::TextDistractor
        } else if rank < keys + 2 * distractors + mismatches {
            Role::Mismatch
        } else {
            Role::Plain
        };
    }
    let topic_of: Vec<usize> = (0..m).map(|_| rng.gen_range(0..cfg.topics)).collect();
    let sentence_topic: Vec<usize> = (0..m)
        .map(|k| {
            if roles[k] == Role::Mismatch {
                (topic_of[k] + rng.gen_range(1..cfg.topics)) % cfg.topics
            } else {
                topic_of[k]
            }
        })
        .collect();
    let background = rng.gen_range(0..cfg.topics);

    let latent = |topic: usize, salient: bool, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let noise = gaussian(rng, cfg.latent_dim);
        world.topics[topic]
            .iter()
            .zip(&world.salient)
            .zip(noise)
            .map(|((t, s), e)| t + if salient { cfg.salience * s } else { 0.0 } + cfg.noise * e)
            .collect()
    };

    let mut owner: Vec<Option<usize>> = vec![None; n];
    for w in &windows {
        for f in w.start..w.end {
            owner[f] = Some(w.sentence);
        }
    }
    let mut frame_rows = Vec::with_capacity(n * cfg.video_dim);
    let mut frame_labels = vec![0u8; n];
    for (f, o) in owner.iter().enumerate() {
        let (topic, salient) = match *o {
            Some(k) => (topic_of[k], matches!(roles[k], Role::Key | Role::VideoDistractor | Role::Mismatch)),
            None => (background, false),
        };
        if matches!(*o, Some(k) if roles[k] == Role::Key) {
            frame_labels[f] = 1;
        }
        let z = latent(topic, salient, &mut rng);
        frame_rows.extend(world.project(&z, true));
    }
    let mut sentence_rows = Vec::with_capacity(m * cfg.text_dim);
    let mut sentence_labels = vec![0u8; m];
    for k in 0..m {
        let salient = matches!(roles[k], Role::Key | Role::TextDistractor | Role::Mismatch);
        sentence_labels[k] = (roles[k] == Role::Key) as u8;
        let z = latent(sentence_topic[k], salient, &mut rng);
        sentence_rows.extend(world.project(&z, false));
    }

    let annotator_scores = (cfg.annotators > 0).then(|| {
        let data = (0..cfg.annotators)
            .flat_map(|_| frame_labels.clone())
            .map(|l| {
                let e: f64 = rng.sample(StandardNormal);
                (l as f64 + cfg.annotator_noise * e).clamp(0.0, 1.0) as f32 as f64
            })
            .collect();
        Tensor::new(cfg.annotators, n, data).expect("shape")
    });
    let mut bounds: Vec<usize> = windows.iter().flat_map(|w| [w.start, w.end]).chain([0, n]).collect();
    bounds.sort_unstable();
    bounds.dedup();
    let sentences_text: Vec<Vec<String>> = sentence_topic.iter().map(|&t| world.topic_words[t].clone()).collect();
    let gt_summary_text = (0..m).filter(|&k| sentence_labels[k] == 1).flat_map(|k| sentences_text[k].clone()).collect();

    SampleRecord {
        id,
        frame_features: Tensor::new(n, cfg.video_dim, frame_rows).expect("shape"),
        sentence_features: Tensor::new(m, cfg.text_dim, sentence_rows).expect("shape"),
        windows,
        frame_labels,
        sentence_labels,
        annotator_scores,
        segmentation: Some(Segmentation::new(bounds).expect("ascending boundaries")),
        sentences_text: Some(sentences_text),
        gt_summary_text: Some(gt_summary_text),
    }
}

/// In-memory result of generation.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub header: ManifestHeader,
    pub samples: Vec<(Split, SampleRecord)>,
    /// Training accuracy of a logistic probe separating key from non-key
    /// windows on `[mean frame features, sentence features]`.
    pub probe_accuracy: f64,
}

pub fn generate_samples(cfg: &GenConfig) -> Result<GeneratedDataset> {
    use rayon::prelude::*;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::new(cfg, &mut rng);
    let seeds: Vec<u64> = (0..cfg.samples).map(|_| rng.gen()).collect();
    let train = cfg.train_samples();
    let samples: Vec<(Split, SampleRecord)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let split = if i < train {
                Split::Train
            } else if i < train + cfg.val_samples {
                Split::Val
            } else {
                Split::Test
            };
            (split, generate_one(cfg, &world, format!("{}-{i:05}", cfg.dataset), seed))
        })
        .collect();
    let probe_accuracy = window_probe_accuracy(samples.iter().map(|(_, r)| r));
    let header = ManifestHeader { dataset: cfg.dataset.clone(), video_dim: cfg.video_dim, text_dim: cfg.text_dim };
    Ok(GeneratedDataset { header, samples, probe_accuracy })
}

/// Generates and writes a dataset directory.
pub fn gen_synthetic(cfg: &GenConfig, dir: &std::path::Path) -> Result<(Manifest, GeneratedDataset)> {
    let data = generate_samples(cfg)?;
    let manifest = write_dataset(dir, &data.header, &data.samples)?;
    Ok((manifest, data))
}

/// Per-window features `[mean frame features, sentence features, 1]` and
/// the window's key label.
fn window_examples<'a>(records: impl Iterator<Item = &'a SampleRecord>) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        for w in &r.windows {
            if w.end == w.start {
                continue;
            }
            let mut x = vec![0.0; r.frame_features.cols()];
            for f in w.start..w.end {
                x.iter_mut().zip(r.frame_features.row(f)).for_each(|(a, v)| *a += v);
            }
            x.iter_mut().for_each(|a| *a /= (w.end - w.start) as f64);
            x.extend_from_slice(r.sentence_features.row(w.sentence));
            x.push(1.0);
            xs.push(x);
            ys.push(r.sentence_labels[w.sentence] == 1);
        }
    }
    (xs, ys)
}

/// Fits a logistic probe by full-batch gradient descent and returns its
/// accuracy on the same windows.
pub fn window_probe_accuracy<'a>(records: impl Iterator<Item = &'a SampleRecord>) -> f64 {
    let (xs, ys) = window_examples(records);
    if xs.is_empty() {
        return 0.0;
    }
    let d = xs[0].len();
    let mut w = vec![0.0; d];
    let lr = 0.5;
    for _ in 0..500 {
        let mut g = vec![0.0; d];
        for (x, &y) in xs.iter().zip(&ys) {
            let p = 1.0 / (1.0 + (-dot(&w, x)).exp());
            let e = p - y as u8 as f64;
            g.iter_mut().zip(x).for_each(|(gi, xi)| *gi += e * xi);
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= lr * gi / xs.len() as f64);
    }
    let correct = xs.iter().zip(&ys).filter(|(x, &y)| (dot(&w, x) > 0.0) == y).count();
    correct as f64 / xs.len() as f64
}

use super::SampleRecord;
use crate::alignmask::{build_mask, AlignmentMask, TokenLayout};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Samples padded to shared sizes. Frame and sentence blocks are padded to
/// the batch maxima; every token sequence is padded to `pad_len`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub pad_frames: usize,
    pub pad_sentences: usize,
    pub pad_len: usize,
    /// Per sample, `pad_frames × D_v`, zero rows past the real length.
    pub frames: Vec<Tensor>,
    /// Per sample, `pad_sentences × D_t`.
    pub sentences: Vec<Tensor>,
    pub frame_lengths: Vec<usize>,
    pub sentence_lengths: Vec<usize>,
    pub layouts: Vec<TokenLayout>,
    pub masks: Vec<AlignmentMask>,
    pub frame_labels: Vec<Vec<u8>>,
    pub sentence_labels: Vec<Vec<u8>>,
    pub frame_valid: Vec<Vec<bool>>,
    pub sentence_valid: Vec<Vec<bool>>,
    /// Real (non-padding) token positions.
    pub token_valid: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Real rows of sample `b`'s frame block.
    pub fn real_frames(&self, b: usize) -> Tensor {
        take_rows(&self.frames[b], self.frame_lengths[b])
    }

    pub fn real_sentences(&self, b: usize) -> Tensor {
        take_rows(&self.sentences[b], self.sentence_lengths[b])
    }
}

fn take_rows(t: &Tensor, rows: usize) -> Tensor {
    Tensor::new(rows, t.cols(), t.data()[..rows * t.cols()].to_vec()).expect("prefix rows")
}

fn pad_rows(t: &Tensor, rows: usize) -> Tensor {
    let mut data = t.data().to_vec();
    data.resize(rows * t.cols(), 0.0);
    Tensor::new(rows, t.cols(), data).expect("padded shape")
}

fn pad_labels(labels: &[u8], len: usize) -> (Vec<u8>, Vec<bool>) {
    let mut l = labels.to_vec();
    l.resize(len, 0);
    (l, (0..len).map(|i| i < labels.len()).collect())
}

/// Pads a batch. `pad_len` defaults to the longest token sequence
/// (`N + M + 2`) in the batch and may only be larger.
pub fn make_batch(samples: &[&SampleRecord], pad_len: Option<usize>) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot batch zero samples".into()));
    }
    let pad_frames = samples.iter().map(|s| s.frames()).max().expect("non-empty");
    let pad_sentences = samples.iter().map(|s| s.sentences()).max().expect("non-empty");
    let longest = samples.iter().map(|s| s.frames() + s.sentences() + 2).max().expect("non-empty");
    let pad_len = match pad_len {
        Some(p) if p < longest => {
            return Err(Error::Shape(format!("pad length {p} shorter than longest sample ({longest} tokens)")))
        }
        Some(p) => p,
        None => longest,
    };
    let mut batch = Batch {
        pad_frames,
        pad_sentences,
        pad_len,
        frames: Vec::new(),
        sentences: Vec::new(),
        frame_lengths: Vec::new(),
        sentence_lengths: Vec::new(),
        layouts: Vec::new(),
        masks: Vec::new(),
        frame_labels: Vec::new(),
        sentence_labels: Vec::new(),
        frame_valid: Vec::new(),
        sentence_valid: Vec::new(),
        token_valid: Vec::new(),
    };
    for s in samples {
        let layout = TokenLayout::with_padding(s.frames(), s.sentences(), pad_len)?;
        batch.masks.push(build_mask(&layout, &s.windows)?);
        batch.token_valid.push((0..pad_len).map(|p| p < layout.real_len()).collect());
        batch.layouts.push(layout);
        batch.frames.push(pad_rows(&s.frame_features, pad_frames));
        batch.sentences.push(pad_rows(&s.sentence_features, pad_sentences));
        batch.frame_lengths.push(s.frames());
        batch.sentence_lengths.push(s.sentences());
        let (fl, fv) = pad_labels(&s.frame_labels, pad_frames);
        let (sl, sv) = pad_labels(&s.sentence_labels, pad_sentences);
        batch.frame_labels.push(fl);
        batch.frame_valid.push(fv);
        batch.sentence_labels.push(sl);
        batch.sentence_valid.push(sv);
    }
    Ok(batch)
}

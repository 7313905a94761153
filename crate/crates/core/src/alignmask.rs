//! Token layout, segment ids and the alignment-guided attention mask.
//!
//! The joint sequence is `[CLSV, F₁..F_N, CLST, S₁..S_M, pad…]`. Tokens of
//! the same modality (CLS included) always see each other; a frame and a
//! sentence see each other only when the frame lies in the sentence's
//! half-open window `[start, end)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time window of one sentence, in frame indices, half-open.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl SegmentWindow {
    pub fn new(sentence: usize, start: usize, end: usize) -> Self {
        Self { sentence, start, end }
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Video,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    ClsVideo,
    Frame(usize),
    ClsText,
    Sentence(usize),
}

impl Token {
    pub fn modality(self) -> Modality {
        match self {
            Token::ClsVideo | Token::Frame(_) => Modality::Video,
            Token::ClsText | Token::Sentence(_) => Modality::Text,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    frames: usize,
    sentences: usize,
    pad_len: usize,
}

impl TokenLayout {
    pub fn new(frames: usize, sentences: usize) -> Self {
        Self { frames, sentences, pad_len: frames + sentences + 2 }
    }

    pub fn with_padding(frames: usize, sentences: usize, pad_len: usize) -> Result<Self> {
        let layout = Self::new(frames, sentences);
        if pad_len < layout.real_len() {
            return Err(Error::Shape(format!("pad length {pad_len} shorter than {} tokens", layout.real_len())));
        }
        Ok(Self { pad_len, ..layout })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn sentences(&self) -> usize {
        self.sentences
    }

    /// Number of real tokens, `N + M + 2`.
    pub fn real_len(&self) -> usize {
        self.frames + self.sentences + 2
    }

    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    pub fn cls_video(&self) -> usize {
        0
    }

    pub fn frame(&self, i: usize) -> usize {
        1 + i
    }

    pub fn cls_text(&self) -> usize {
        self.frames + 1
    }

    pub fn sentence(&self, k: usize) -> usize {
        self.frames + 2 + k
    }

    pub fn frame_positions(&self) -> std::ops::Range<usize> {
        1..self.frames + 1
    }

    pub fn sentence_positions(&self) -> std::ops::Range<usize> {
        self.frames + 2..self.real_len()
    }

    /// Inverse of the position maps; `None` for padding.
    pub fn token(&self, pos: usize) -> Option<Token> {
        let n = self.frames;
        match pos {
            0 => Some(Token::ClsVideo),
            p if p <= n => Some(Token::Frame(p - 1)),
            p if p == n + 1 => Some(Token::ClsText),
            p if p < self.real_len() => Some(Token::Sentence(p - n - 2)),
            _ => None,
        }
    }
}

/// Boolean attention permissions, `pad_len × pad_len`, row = query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentMask {
    len: usize,
    bits: Arc<Vec<bool>>,
}

impl AlignmentMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, query: usize, key: usize) -> bool {
        self.bits[query * self.len + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.bits[query * self.len..(query + 1) * self.len]
    }

    pub fn bits(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.bits)
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn validate_windows(frames: usize, sentences: usize, windows: &[SegmentWindow]) -> Result<()> {
    let mut seen = vec![false; sentences];
    let mut last_start = 0;
    for (i, w) in windows.iter().enumerate() {
        if w.sentence >= sentences {
            return Err(Error::Invalid(format!("window {i}: sentence {} of {sentences}", w.sentence)));
        }
        if w.start > w.end || w.end > frames {
            return Err(Error::Invalid(format!(
                "window {i}: [{}, {}) outside 0..{frames}",
                w.start, w.end
            )));
        }
        if w.start < last_start {
            return Err(Error::Invalid(format!("window {i}: windows not sorted by start")));
        }
        if std::mem::replace(&mut seen[w.sentence], true) {
            return Err(Error::Invalid(format!("window {i}: sentence {} has two windows", w.sentence)));
        }
        last_start = w.start;
    }
    Ok(())
}

/// Alignment-guided mask: full attention within each modality, cross-modal
/// attention only between a sentence and the frames of its window (both
/// directions). CLS tokens stay within their own modality; padding is blank.
/// A modality with no tokens leaves its CLS row blank as well.
pub fn build_mask(layout: &TokenLayout, windows: &[SegmentWindow]) -> Result<AlignmentMask> {
    validate_windows(layout.frames, layout.sentences, windows)?;
    let len = layout.pad_len;
    let mut bits = vec![false; len * len];
    let video = (layout.frames > 0).then(|| 0..layout.cls_text());
    let text = (layout.sentences > 0).then(|| layout.cls_text()..layout.real_len());
    for block in [video, text].into_iter().flatten() {
        for i in block.clone() {
            bits[i * len + block.start..i * len + block.end].fill(true);
        }
    }
    for w in windows {
        let s = layout.sentence(w.sentence);
        for f in w.start..w.end {
            let fp = layout.frame(f);
            bits[s * len + fp] = true;
            bits[fp * len + s] = true;
        }
    }
    Ok(AlignmentMask { len, bits: Arc::new(bits) })
}

/// Unrestricted attention among all real tokens (the no-alignment ablation).
pub fn global_mask(layout: &TokenLayout) -> AlignmentMask {
    let len = layout.pad_len;
    let real = layout.real_len();
    let mut bits = vec![false; len * len];
    for i in 0..real {
        bits[i * len..i * len + real].fill(true);
    }
    AlignmentMask { len, bits: Arc::new(bits) }
}

/// Segment id per real token: sentence `k` gets `k + 1`; a frame gets the id
/// of the lowest-indexed sentence whose window covers it, else 0; CLS gets 0.
pub fn segment_ids(layout: &TokenLayout, windows: &[SegmentWindow]) -> Vec<usize> {
    let mut ids = vec![0; layout.real_len()];
    for f in 0..layout.frames {
        if let Some(k) = windows.iter().filter(|w| w.contains(f)).map(|w| w.sentence).min() {
            ids[layout.frame(f)] = k + 1;
        }
    }
    for k in 0..layout.sentences {
        ids[layout.sentence(k)] = k + 1;
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(k: usize, s: usize, e: usize) -> SegmentWindow {
        SegmentWindow::new(k, s, e)
    }

    #[test]
    fn video_only_layout_fills_video_block() {
        let layout = TokenLayout::new(3, 0);
        let mask = build_mask(&layout, &[]).unwrap();
        assert_eq!(mask.len(), 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(mask.get(i, j), i < 4 && j < 4, "({i},{j})");
            }
        }
    }

    #[test]
    fn two_windows_cross_entries() {
        let layout = TokenLayout::new(4, 2);
        let mask = build_mask(&layout, &[w(0, 0, 2), w(1, 2, 4)]).unwrap();
        let s0 = layout.sentence(0);
        let s1 = layout.sentence(1);
        assert!(mask.get(s0, layout.frame(0)) && mask.get(layout.frame(0), s0));
        assert!(!mask.get(s1, layout.frame(0)));
        assert!(mask.get(s1, layout.frame(3)));
        assert!(!mask.get(layout.cls_video(), s0));
        assert!(!mask.get(layout.cls_text(), layout.frame(1)));
    }

    #[test]
    fn full_cover_window() {
        let layout = TokenLayout::new(5, 1);
        let mask = build_mask(&layout, &[w(0, 0, 5)]).unwrap();
        for f in 0..5 {
            assert!(mask.get(layout.sentence(0), layout.frame(f)));
        }
    }

    #[test]
    fn padding_rows_and_columns_blank() {
        let layout = TokenLayout::with_padding(2, 1, 9).unwrap();
        let mask = build_mask(&layout, &[w(0, 0, 2)]).unwrap();
        for p in layout.real_len()..9 {
            assert!(mask.row(p).iter().all(|&b| !b));
            assert!((0..9).all(|q| !mask.get(q, p)));
        }
    }

    #[test]
    fn out_of_range_window_rejected() {
        let layout = TokenLayout::new(4, 1);
        assert!(build_mask(&layout, &[w(0, 2, 5)]).is_err());
        assert!(build_mask(&layout, &[w(1, 0, 1)]).is_err());
    }

    #[test]
    fn segment_id_rules() {
        let layout = TokenLayout::new(4, 0);
        assert_eq!(segment_ids(&layout, &[]), vec![0; 6]);

        let layout = TokenLayout::new(4, 2);
        let ids = segment_ids(&layout, &[w(0, 0, 2), w(1, 2, 4)]);
        let frames: Vec<_> = layout.frame_positions().map(|p| ids[p]).collect();
        let sents: Vec<_> = layout.sentence_positions().map(|p| ids[p]).collect();
        assert_eq!(frames, vec![1, 1, 2, 2]);
        assert_eq!(sents, vec![1, 2]);
        assert_eq!(ids[layout.cls_video()], 0);
        assert_eq!(ids[layout.cls_text()], 0);

        let ids = segment_ids(&layout, &[w(0, 0, 3), w(1, 1, 4)]);
        let frames: Vec<_> = layout.frame_positions().map(|p| ids[p]).collect();
        assert_eq!(frames, vec![1, 1, 1, 2]);
    }

    #[test]
    fn token_map_is_bijective() {
        let layout = TokenLayout::with_padding(3, 2, 10).unwrap();
        for p in 0..10 {
            let back = match layout.token(p) {
                Some(Token::ClsVideo) => layout.cls_video(),
                Some(Token::Frame(i)) => layout.frame(i),
                Some(Token::ClsText) => layout.cls_text(),
                Some(Token::Sentence(k)) => layout.sentence(k),
                None => {
                    assert!(p >= layout.real_len());
                    continue;
                }
            };
            assert_eq!(back, p);
        }
    }
}

//! Binary sample file, little-endian throughout:
//!
//! ```text
//! magic "A2DS" | u32 version
//! u32 N | u32 M | u32 D_v | u32 D_t | u32 flags | u32 windows W | u32 annotators A
//! f32 frame features      N·D_v
//! f32 sentence features   M·D_t
//! f32 annotator scores    A·N                (flags bit 0)
//! i32 windows             W × (sentence, start, end)
//! i32 frame labels        N
//! i32 sentence labels     M
//! i32 boundary count B, then B boundaries    (flags bit 1)
//! sentence texts          M × token list     (flags bit 2)
//! summary text            token list         (flags bit 3)
//! ```
//!
//! A token list is `u32 count` followed by `count × (u32 byte length, UTF-8)`.
//! The sample id is not stored; it comes from the manifest.

use std::path::Path;

use super::SampleRecord;
use crate::alignmask::SegmentWindow;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::summarize::Segmentation;

pub const SAMPLE_MAGIC: &[u8; 4] = b"A2DS";
pub const SAMPLE_VERSION: u32 = 1;

const HAS_ANNOTATORS: u32 = 1;
const HAS_SEGMENTATION: u32 = 1 << 1;
const HAS_SENTENCE_TEXT: u32 = 1 << 2;
const HAS_SUMMARY_TEXT: u32 = 1 << 3;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_i32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as i32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_tokens(out: &mut Vec<u8>, tokens: &[String]) {
    put_u32(out, tokens.len());
    for t in tokens {
        put_u32(out, t.len());
        out.extend_from_slice(t.as_bytes());
    }
}

pub fn encode_sample(r: &SampleRecord) -> Vec<u8> {
    let mut flags = 0;
    if r.annotator_scores.is_some() {
        flags |= HAS_ANNOTATORS;
    }
    if r.segmentation.is_some() {
        flags |= HAS_SEGMENTATION;
    }
    if r.sentences_text.is_some() {
        flags |= HAS_SENTENCE_TEXT;
    }
    if r.gt_summary_text.is_some() {
        flags |= HAS_SUMMARY_TEXT;
    }
    let mut out = Vec::new();
    out.extend_from_slice(SAMPLE_MAGIC);
    out.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
    put_u32(&mut out, r.frames());
    put_u32(&mut out, r.sentences());
    put_u32(&mut out, r.frame_features.cols());
    put_u32(&mut out, r.sentence_features.cols());
    out.extend_from_slice(&flags.to_le_bytes());
    put_u32(&mut out, r.windows.len());
    put_u32(&mut out, r.annotator_scores.as_ref().map_or(0, Tensor::rows));

    put_f32s(&mut out, &r.frame_features);
    put_f32s(&mut out, &r.sentence_features);
    if let Some(a) = &r.annotator_scores {
        put_f32s(&mut out, a);
    }
    for w in &r.windows {
        put_i32(&mut out, w.sentence);
        put_i32(&mut out, w.start);
        put_i32(&mut out, w.end);
    }
    for &l in r.frame_labels.iter().chain(&r.sentence_labels) {
        put_i32(&mut out, l as usize);
    }
    if let Some(seg) = &r.segmentation {
        put_i32(&mut out, seg.boundaries().len());
        for &b in seg.boundaries() {
            put_i32(&mut out, b);
        }
    }
    if let Some(texts) = &r.sentences_text {
        for t in texts {
            put_tokens(&mut out, t);
        }
    }
    if let Some(t) = &r.gt_summary_text {
        put_tokens(&mut out, t);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn index(&mut self, what: &str) -> Result<usize> {
        let v = i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        usize::try_from(v).map_err(|_| Error::format(self.path, format!("negative {what} {v}")))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::format(self.path, "block size overflows"))?;
        let raw = self.take(count)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect();
        Tensor::new(rows, cols, data)
    }

    fn tokens(&mut self) -> Result<Vec<String>> {
        let count = self.u32()?;
        let mut out = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = self.u32()?;
            let s = std::str::from_utf8(self.take(len)?).map_err(|_| Error::format(self.path, "token is not UTF-8"))?;
            out.push(s.to_string());
        }
        Ok(out)
    }
}

/// Parses a sample file's bytes. Structural problems are format errors;
/// semantic checks are left to [`SampleRecord::validate`].
pub fn decode_sample(bytes: &[u8], id: &str, path: &Path) -> Result<SampleRecord> {
    let mut c = Cursor { buf: bytes, pos: 0, path };
    if c.take(4)? != SAMPLE_MAGIC {
        return Err(Error::format(path, "bad magic, not a sample file"));
    }
    let version = c.u32()?;
    if version != SAMPLE_VERSION as usize {
        return Err(Error::format(path, format!("unsupported sample version {version}")));
    }
    let (n, m, dv, dt) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let flags = c.u32()? as u32;
    let (num_windows, annotators) = (c.u32()?, c.u32()?);

    let frame_features = c.tensor(n, dv)?;
    let sentence_features = c.tensor(m, dt)?;
    let annotator_scores = if flags & HAS_ANNOTATORS != 0 { Some(c.tensor(annotators, n)?) } else { None };
    let mut windows = Vec::with_capacity(num_windows.min(1 << 16));
    for _ in 0..num_windows {
        windows.push(SegmentWindow::new(c.index("sentence")?, c.index("window start")?, c.index("window end")?));
    }
    let label = |c: &mut Cursor| -> Result<u8> {
        let v = c.index("label")?;
        u8::try_from(v).map_err(|_| Error::format(path, format!("label {v} out of range")))
    };
    let frame_labels = (0..n).map(|_| label(&mut c)).collect::<Result<_>>()?;
    let sentence_labels = (0..m).map(|_| label(&mut c)).collect::<Result<_>>()?;
    let segmentation = if flags & HAS_SEGMENTATION != 0 {
        let count = c.index("boundary count")?;
        let bounds = (0..count).map(|_| c.index("boundary")).collect::<Result<Vec<_>>>()?;
        Some(Segmentation::new(bounds).map_err(|e| Error::format(path, e.to_string()))?)
    } else {
        None
    };
    let sentences_text =
        if flags & HAS_SENTENCE_TEXT != 0 { Some((0..m).map(|_| c.tokens()).collect::<Result<_>>()?) } else { None };
    let gt_summary_text = if flags & HAS_SUMMARY_TEXT != 0 { Some(c.tokens()?) } else { None };
    if c.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(SampleRecord {
        id: id.to_string(),
        frame_features,
        sentence_features,
        windows,
        frame_labels,
        sentence_labels,
        annotator_scores,
        segmentation,
        sentences_text,
        gt_summary_text,
    })
}

pub fn write_sample(path: &Path, r: &SampleRecord) -> Result<()> {
    std::fs::write(path, encode_sample(r)).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path, id: &str) -> Result<SampleRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sample(&bytes, id, path)
}

//! Sample records, the on-disk dataset layout, batching and the synthetic
//! generator.
//!
//! A dataset is a directory holding `manifest.jsonl` plus one binary file per
//! sample. The manifest's first line is a header
//! `{"dataset": .., "video_dim": .., "text_dim": ..}`; every later line is an
//! entry `{"id": .., "path": .., "split": "train" | "val" | "test"}` with
//! `path` relative to the manifest. See [`format`] for the sample layout.

mod batch;
pub mod format;
mod synthetic;

pub use batch::{make_batch, Batch};
pub use format::{decode_sample, encode_sample, read_sample, write_sample, SAMPLE_MAGIC, SAMPLE_VERSION};
pub use synthetic::{gen_synthetic, generate_samples, salient_directions, GenConfig, GeneratedDataset};

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignmask::{validate_windows, SegmentWindow};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::summarize::Segmentation;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One aligned video/transcript sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `N × D_v`
    pub frame_features: Tensor,
    /// `M × D_t`
    pub sentence_features: Tensor,
    pub windows: Vec<SegmentWindow>,
    pub frame_labels: Vec<u8>,
    pub sentence_labels: Vec<u8>,
    /// `A × N` per-annotator importance scores.
    pub annotator_scores: Option<Tensor>,
    pub segmentation: Option<Segmentation>,
    pub sentences_text: Option<Vec<Vec<String>>>,
    pub gt_summary_text: Option<Vec<String>>,
}

impl SampleRecord {
    pub fn frames(&self) -> usize {
        self.frame_features.rows()
    }

    pub fn sentences(&self) -> usize {
        self.sentence_features.rows()
    }

    /// Checks every cross-field invariant; `dims` are the expected feature
    /// widths when known.
    pub fn validate(&self, dims: Option<(usize, usize)>) -> Result<()> {
        let bad = |field: &str, message: String| Error::Validation {
            sample: self.id.clone(),
            field: field.to_string(),
            message,
        };
        let (n, m) = (self.frames(), self.sentences());
        if n == 0 {
            return Err(bad("frame_features", "sample has no frames".into()));
        }
        if let Some((dv, dt)) = dims {
            if self.frame_features.cols() != dv {
                return Err(bad("frame_features", format!("width {} but dataset declares {dv}", self.frame_features.cols())));
            }
            if self.sentence_features.cols() != dt {
                return Err(bad(
                    "sentence_features",
                    format!("width {} but dataset declares {dt}", self.sentence_features.cols()),
                ));
            }
        }
        if !self.frame_features.is_finite() {
            return Err(bad("frame_features", "non-finite value".into()));
        }
        if !self.sentence_features.is_finite() {
            return Err(bad("sentence_features", "non-finite value".into()));
        }
        validate_windows(n, m, &self.windows).map_err(|e| bad("windows", e.to_string()))?;
        for (field, labels, len) in [("frame_labels", &self.frame_labels, n), ("sentence_labels", &self.sentence_labels, m)] {
            if labels.len() != len {
                return Err(bad(field, format!("{} labels for {len} items", labels.len())));
            }
            if let Some(v) = labels.iter().find(|&&v| v > 1) {
                return Err(bad(field, format!("label {v} is not 0 or 1")));
            }
        }
        if let Some(a) = &self.annotator_scores {
            if a.cols() != n || a.rows() == 0 {
                return Err(bad("annotator_scores", format!("shape {}×{} for {n} frames", a.rows(), a.cols())));
            }
            if !a.is_finite() {
                return Err(bad("annotator_scores", "non-finite value".into()));
            }
        }
        if let Some(seg) = &self.segmentation {
            if seg.frames() != n {
                return Err(bad("segmentation", format!("covers {} frames, sample has {n}", seg.frames())));
            }
        }
        if let Some(texts) = &self.sentences_text {
            if texts.len() != m {
                return Err(bad("sentences_text", format!("{} texts for {m} sentences", texts.len())));
            }
        }
        Ok(())
    }

    /// Per-annotator binary summaries: annotator scores thresholded at 0.5,
    /// or the frame labels when no annotators are recorded.
    pub fn gt_frame_masks(&self) -> Vec<Vec<bool>> {
        match &self.annotator_scores {
            Some(a) => (0..a.rows()).map(|r| a.row(r).iter().map(|&v| v >= 0.5).collect()).collect(),
            None => vec![self.frame_labels.iter().map(|&v| v == 1).collect()],
        }
    }

    /// Per-annotator real-valued importance, falling back to the labels.
    pub fn gt_frame_scores(&self) -> Vec<Vec<f64>> {
        match &self.annotator_scores {
            Some(a) => (0..a.rows()).map(|r| a.row(r).to_vec()).collect(),
            None => vec![self.frame_labels.iter().map(|&v| v as f64).collect()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dataset: String,
    pub video_dim: usize,
    pub text_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    /// Parses a manifest without touching any sample file.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (_, first) = lines.next().ok_or_else(|| Error::format(path, "empty manifest"))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader =
            serde_json::from_str(&first).map_err(|e| Error::format(path, format!("line 1: {e}")))?;
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {lineno}: {e}")))?;
            if !ids.insert(entry.id.clone()) {
                return Err(Error::format(path, format!("line {lineno}: duplicate id {:?}", entry.id)));
            }
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { header, entries, root })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let mut push = |v: String| {
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        };
        push(serde_json::to_string(&self.header).expect("serializable"));
        for e in &self.entries {
            push(serde_json::to_string(e).expect("serializable"));
        }
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn sample_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Validated samples of the requested splits, with a record of which
/// splits were read from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: ManifestHeader,
    pub samples: Vec<(Split, SampleRecord)>,
    loaded: BTreeSet<Split>,
}

impl Dataset {
    pub fn new(header: ManifestHeader, samples: Vec<(Split, SampleRecord)>) -> Self {
        let loaded = samples.iter().map(|(s, _)| *s).collect();
        Self { header, samples, loaded }
    }

    /// Splits whose files were opened.
    pub fn loaded_splits(&self) -> &BTreeSet<Split> {
        &self.loaded
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.samples.iter().filter(|(s, _)| *s == split).map(|(_, r)| r).collect()
    }
}

/// Loads and validates only the samples of `splits`; other entries' files
/// are never opened.
pub fn load_splits(manifest_path: &Path, splits: &[Split]) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let dims = (manifest.header.video_dim, manifest.header.text_dim);
    let mut samples = Vec::new();
    for entry in manifest.entries.iter().filter(|e| splits.contains(&e.split)) {
        let path = manifest.sample_path(entry);
        let record = read_sample(&path, &entry.id)?;
        record.validate(Some(dims))?;
        samples.push((entry.split, record));
    }
    let mut ds = Dataset::new(manifest.header, samples);
    ds.loaded.extend(splits.iter().copied());
    Ok(ds)
}

/// Loads and validates every sample of a manifest.
pub fn load_and_validate(manifest_path: &Path) -> Result<Vec<SampleRecord>> {
    let ds = load_splits(manifest_path, &[Split::Train, Split::Val, Split::Test])?;
    Ok(ds.samples.into_iter().map(|(_, r)| r).collect())
}

/// Writes samples as `<id>.a2ds` next to a fresh manifest (written last).
pub fn write_dataset(dir: &Path, header: &ManifestHeader, samples: &[(Split, SampleRecord)]) -> Result<Manifest> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    samples.par_iter().try_for_each(|(_, r)| write_sample(&dir.join(format!("{}.a2ds", r.id)), r))?;
    let manifest = Manifest {
        header: header.clone(),
        entries: samples
            .iter()
            .map(|(split, r)| ManifestEntry { id: r.id.clone(), path: format!("{}.a2ds", r.id), split: *split })
            .collect(),
        root: dir.to_path_buf(),
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

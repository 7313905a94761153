//! Turning per-timestep scores into extractive summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Shot boundaries `[0 = b₀ < b₁ < … < b_S = N]`; shot `s` is `[b_s, b_{s+1})`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    boundaries: Vec<usize>,
}

impl Segmentation {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(Error::Invalid("segmentation needs boundaries starting at 0 with at least one shot".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("segmentation boundaries must be strictly ascending".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn single(n: usize) -> Self {
        Self { boundaries: vec![0, n.max(1)] }
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn frames(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    pub fn segment(&self, s: usize) -> std::ops::Range<usize> {
        self.boundaries[s]..self.boundaries[s + 1]
    }

    pub fn durations(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Within-segment scatter of a linear kernel, answered in O(1) per query
/// from cumulative sums of the Gram matrix.
pub struct KernelScatter {
    n: usize,
    diag_cum: Vec<f64>,
    // (n+1)×(n+1) 2-D prefix sums of the Gram matrix.
    block_cum: Vec<f64>,
}

impl KernelScatter {
    pub fn new(features: &Tensor) -> Self {
        let n = features.rows();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = features.row(i).iter().zip(features.row(j)).map(|(a, b)| a * b).sum();
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        let mut diag_cum = vec![0.0; n + 1];
        for i in 0..n {
            diag_cum[i + 1] = diag_cum[i] + gram[i * n + i];
        }
        let w = n + 1;
        let mut block_cum = vec![0.0; w * w];
        for i in 0..n {
            for j in 0..n {
                block_cum[(i + 1) * w + j + 1] =
                    gram[i * n + j] + block_cum[i * w + j + 1] + block_cum[(i + 1) * w + j] - block_cum[i * w + j];
            }
        }
        Self { n, diag_cum, block_cum }
    }

    /// `Σᵢ K(i,i) − (1/len) Σᵢⱼ K(i,j)` over `[start, end)`.
    pub fn scatter(&self, start: usize, end: usize) -> f64 {
        if end <= start {
            return 0.0;
        }
        let w = self.n + 1;
        let block = self.block_cum[end * w + end] - self.block_cum[start * w + end] - self.block_cum[end * w + start]
            + self.block_cum[start * w + start];
        let v = self.diag_cum[end] - self.diag_cum[start] - block / (end - start) as f64;
        v.max(0.0)
    }
}

/// Kernel temporal segmentation with a linear kernel. For every segment
/// count `m ∈ 1..=max_segments` the minimum total scatter `J(m)` is found by
/// dynamic programming; the returned segmentation minimises
/// `J(m) + penalty · m · (ln(N/m) + 1)`.
pub fn kts_segment(features: &Tensor, max_segments: usize, penalty: f64) -> Segmentation {
    let n = features.rows();
    if n < 2 {
        return Segmentation::single(n);
    }
    let max_m = max_segments.clamp(1, n);
    let ks = KernelScatter::new(features);
    // cost[m][t]: best scatter splitting [0, t) into m segments; arg[m][t]: last boundary.
    let mut cost = vec![vec![f64::INFINITY; n + 1]; max_m + 1];
    let mut arg = vec![vec![0usize; n + 1]; max_m + 1];
    for t in 1..=n {
        cost[1][t] = ks.scatter(0, t);
    }
    for m in 2..=max_m {
        for t in m..=n {
            let mut best = f64::INFINITY;
            let mut best_s = m - 1;
            for s in (m - 1)..t {
                let c = cost[m - 1][s] + ks.scatter(s, t);
                if c < best {
                    best = c;
                    best_s = s;
                }
            }
            cost[m][t] = best;
            arg[m][t] = best_s;
        }
    }
    let mut best_m = 1;
    let mut best_obj = f64::INFINITY;
    for (m, row) in cost.iter().enumerate().skip(1) {
        let mf = m as f64;
        let obj = row[n] + penalty * mf * ((n as f64 / mf).ln() + 1.0);
        if obj < best_obj - 1e-12 {
            best_obj = obj;
            best_m = m;
        }
    }
    let mut bounds = vec![n];
    let mut t = n;
    for m in (2..=best_m).rev() {
        t = arg[m][t];
        bounds.push(t);
    }
    bounds.push(0);
    bounds.reverse();
    Segmentation { boundaries: bounds }
}

/// Default segment cap, `⌈N / 10⌉`.
pub fn default_max_segments(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

/// Mean frame score of each segment.
pub fn segment_scores(frame_scores: &[f64], seg: &Segmentation) -> Result<Vec<f64>> {
    if seg.frames() != frame_scores.len() {
        return Err(Error::Shape(format!(
            "segmentation covers {} frames, scores have {}",
            seg.frames(),
            frame_scores.len()
        )));
    }
    Ok((0..seg.num_segments())
        .map(|s| {
            let r = seg.segment(s);
            let len = r.len() as f64;
            frame_scores[r].iter().sum::<f64>() / len
        })
        .collect())
}

/// Value ties closer than this are treated as equal.
pub const VALUE_TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySelection {
    /// Selected shots (budgeted mode).
    pub segments: Vec<usize>,
    /// Selected frames, ascending.
    pub frames: Vec<usize>,
    /// Selected sentences, ascending.
    pub sentences: Vec<usize>,
    /// Frames in the video summary.
    pub duration: usize,
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    value: f64,
    duration: usize,
    take: bool,
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    if a.0 > b.0 + VALUE_TIE_EPS {
        return true;
    }
    if a.0 < b.0 - VALUE_TIE_EPS {
        return false;
    }
    a.1 < b.1
}

/// Exact 0/1 knapsack over segments: maximise total value with total
/// duration `≤ budget`. Ties prefer smaller duration, then the
/// lexicographically smallest index set.
pub fn knapsack_select(values: &[f64], durations: &[usize], budget: usize) -> Result<SummarySelection> {
    if values.len() != durations.len() {
        return Err(Error::Shape("values and durations differ in length".into()));
    }
    if durations.iter().any(|&d| d == 0) {
        return Err(Error::Invalid("segment durations must be positive".into()));
    }
    let n = values.len();
    if budget == 0 || n == 0 {
        return Ok(SummarySelection::default());
    }
    // Suffix DP: table[i][c] = best over items i.. with capacity c. Walking
    // forward from item 0, including an item on a tie yields the
    // lexicographically smaller set.
    let empty = Cell { value: 0.0, duration: 0, take: false };
    let mut table = vec![vec![empty; budget + 1]; n + 1];
    for i in (0..n).rev() {
        for c in 0..=budget {
            let skip = table[i + 1][c];
            let mut cell = Cell { take: false, ..skip };
            if durations[i] <= c {
                let rest = table[i + 1][c - durations[i]];
                let with = (rest.value + values[i], rest.duration + durations[i]);
                if !better((skip.value, skip.duration), with) {
                    cell = Cell { value: with.0, duration: with.1, take: true };
                }
            }
            table[i][c] = cell;
        }
    }
    let mut c = budget;
    let mut segments = Vec::new();
    for (i, row) in table.iter().take(n).enumerate() {
        if row[c].take {
            segments.push(i);
            c -= durations[i];
        }
    }
    let duration = segments.iter().map(|&i| durations[i]).sum();
    Ok(SummarySelection { segments, duration, ..Default::default() })
}

/// Budget in frames, `⌊fraction · N⌋`.
pub fn budget_frames(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Indices of the `k` largest scores (ties to the lower index), ascending.
pub fn topk_select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx.sort_unstable();
    idx
}

/// Segmentation → per-shot mean scores → knapsack, expanded back to frames.
pub fn budgeted_video_summary(frame_scores: &[f64], seg: &Segmentation, fraction: f64) -> Result<SummarySelection> {
    let values = segment_scores(frame_scores, seg)?;
    let budget = budget_frames(frame_scores.len(), fraction);
    let mut sel = knapsack_select(&values, &seg.durations(), budget)?;
    sel.frames = sel.segments.iter().flat_map(|&s| seg.segment(s)).collect();
    Ok(sel)
}

//! Segments a frame sequence with kernel temporal segmentation, averages
//! frame scores per shot, and picks shots under a 15% duration budget.

use a2summ::numerics::Tensor;
use a2summ::summarize::{budget_frames, budgeted_video_summary, default_max_segments, kts_segment, segment_scores};

fn main() -> a2summ::Result<()> {
    // Four visual regimes of different lengths.
    let lengths = [14, 6, 25, 15];
    let mut rows = Vec::new();
    for (r, &len) in lengths.iter().enumerate() {
        for t in 0..len {
            let mut row = vec![0.0; 4];
            row[r] = 1.0;
            row[(r + 1) % 4] = 0.05 * ((t % 3) as f64);
            rows.push(row);
        }
    }
    let n = rows.len();
    let features = Tensor::from_rows(&rows)?;
    let seg = kts_segment(&features, default_max_segments(n), 1.0);
    println!("{n} frames, shot boundaries {:?}", seg.boundaries());

    let scores: Vec<f64> = (0..n).map(|i| if (14..20).contains(&i) || (45..48).contains(&i) { 0.9 } else { 0.2 }).collect();
    println!("shot scores {:.2?}", segment_scores(&scores, &seg)?);
    let summary = budgeted_video_summary(&scores, &seg, 0.15)?;
    println!(
        "budget {} frames; chose shots {:?} ({} frames)",
        budget_frames(n, 0.15),
        summary.segments,
        summary.duration
    );
    Ok(())
}

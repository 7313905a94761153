//! Focal loss, hard-negative selection and the two contrastive terms on
//! hand-sized inputs.

use a2summ::alignmask::TokenLayout;
use a2summ::losses::{focal_loss, inter_sample_loss, intra_sample_loss, select_contrastive_pairs};
use a2summ::numerics::{Tape, Tensor};

fn main() -> a2summ::Result<()> {
    let mut tape = Tape::new();
    let scores = tape.constant(Tensor::column(&[0.9, 0.2, 0.6, 0.1]));
    let focal = focal_loss(&mut tape, scores, &[1, 0, 1, 0], 0.25, 2.0)?;
    println!("focal loss: {:.6}", tape.value(focal).item());

    let p = [0.9, 0.1, 0.2, 0.95, 0.8, 0.3, 0.85, 0.4];
    let frame_labels = [0, 0, 0, 1, 0, 0, 0, 0];
    let sets = select_contrastive_pairs(&p, &frame_labels, &[0.7, 0.2], &[1, 0], 4, 1);
    println!("positive frames {:?}, hard negatives {:?}", sets.positive_frames, sets.hard_negative_frames);

    // Matched video/text CLS embeddings on orthogonal axes.
    let v = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?);
    let log_tau = tape.constant(Tensor::scalar(0.0));
    let inter = inter_sample_loss(&mut tape, v, v, log_tau)?;
    println!("inter-sample loss: {:.5}", tape.value(inter).item());

    // Fused features for 8 frames and 2 sentences; key frame 3 matches
    // key sentence 0, hard negatives point elsewhere.
    let layout = TokenLayout::new(8, 2);
    let mut z = Tensor::full(layout.pad_len(), 3, 0.1);
    z.row_mut(layout.frame(3)).copy_from_slice(&[1.0, 0.0, 0.0]);
    z.row_mut(layout.sentence(0)).copy_from_slice(&[0.9, 0.1, 0.0]);
    for &i in &sets.hard_negative_frames {
        z.row_mut(layout.frame(i)).copy_from_slice(&[0.0, 1.0, 0.0]);
    }
    let z = tape.constant(z);
    let intra = intra_sample_loss(&mut tape, z, &sets, &layout, log_tau)?;
    println!("intra-sample loss: {:.5}", tape.value(intra).item());
    Ok(())
}

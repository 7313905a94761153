//! Builds the alignment mask for a small video/transcript pair, prints it,
//! and runs one transformer block under it.

use a2summ::alignmask::{build_mask, global_mask, SegmentWindow, Token, TokenLayout};
use a2summ::model::{embed_inputs, transformer_block, ModelConfig, ModelParams};
use a2summ::numerics::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn label(t: Option<Token>) -> String {
    match t {
        Some(Token::ClsVideo) => "CV".into(),
        Some(Token::Frame(i)) => format!("f{i}"),
        Some(Token::ClsText) => "CT".into(),
        Some(Token::Sentence(k)) => format!("s{k}"),
        None => "--".into(),
    }
}

fn main() -> a2summ::Result<()> {
    // Six frames, two sentences; sentence 1 covers frames 3..6. One pad slot.
    let windows = [SegmentWindow::new(0, 0, 3), SegmentWindow::new(1, 3, 6)];
    let layout = TokenLayout::with_padding(6, 2, 11)?;
    let mask = build_mask(&layout, &windows)?;

    print!("    ");
    for k in 0..layout.pad_len() {
        print!("{:>3}", label(layout.token(k)));
    }
    println!();
    for q in 0..layout.pad_len() {
        print!("{:>3} ", label(layout.token(q)));
        for k in 0..layout.pad_len() {
            print!("{:>3}", if mask.get(q, k) { "x" } else { "." });
        }
        println!();
    }
    println!("allowed pairs: {} aligned vs {} global", mask.count_true(), global_mask(&layout).count_true());

    let cfg = ModelConfig { width: 8, heads: 2, layers: 1, video_dim: 4, text_dim: 4, dropout: 0.0, ..ModelConfig::default() };
    let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let mut tape = Tape::new();
    let p = params.on_tape(&mut tape, false);
    let frames = tape.constant(Tensor::full(6, 4, 0.5));
    let sentences = tape.constant(Tensor::full(2, 4, -0.5));
    let x = embed_inputs(&mut tape, &p, &cfg, &layout, frames, sentences, &windows)?;
    let y = transformer_block(&mut tape, &p.blocks[0], &cfg, &layout, x, &mask, &mut None)?;
    let out = tape.value(y);
    println!("block output for s1: {:.3?}", out.row(layout.sentence(1)));
    println!("padding row stays zero: {}", out.row(layout.pad_len() - 1).iter().all(|&v| v == 0.0));
    Ok(())
}

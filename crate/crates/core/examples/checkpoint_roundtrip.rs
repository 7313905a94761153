//! Saves a freshly initialized model, reloads it, and confirms the bytes and
//! the predictions are unchanged.

use a2summ::model::{forward, load_checkpoint, save_checkpoint, write_checkpoint, ModelConfig, ModelParams};
use a2summ::alignmask::SegmentWindow;
use a2summ::numerics::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> a2summ::Result<()> {
    let cfg = ModelConfig { video_dim: 6, text_dim: 5, ..ModelConfig::default() };
    let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let path = std::env::temp_dir().join("a2summ-example.ckpt");
    save_checkpoint(&path, &cfg, &params)?;
    let (cfg2, params2) = load_checkpoint(&path)?;
    println!("{} parameters, {} bytes on disk", params.num_values(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    println!("identical after reload: {}", cfg2 == cfg && params2 == params);
    println!("re-encoding is byte-identical: {}", write_checkpoint(&cfg2, &params2) == std::fs::read(&path).unwrap_or_default());

    let frames = Tensor::full(4, 6, 0.3);
    let sentences = Tensor::full(2, 5, -0.2);
    let windows = [SegmentWindow::new(0, 0, 2), SegmentWindow::new(1, 2, 4)];
    let a = forward(&params, &cfg, &frames, &sentences, &windows)?;
    let b = forward(&params2, &cfg, &frames, &sentences, &windows)?;
    println!("frame scores {:.4?}, reload matches: {}", a.frame_scores, a == b);
    Ok(())
}

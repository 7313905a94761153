//! The summarization network: input embedding, alignment-masked transformer
//! blocks with per-modality feed-forward experts, and two score heads.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    embed_inputs, forward, forward_tape, predict_scores, transformer_block, Dropout, ForwardOutput, TapeForward,
};
pub use params::{BlockParams, Ffn, ModelParams, INITIAL_TEMPERATURE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Common embedding width `C`.
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub video_dim: usize,
    pub text_dim: usize,
    /// Longest frame or sentence sequence the position table supports.
    pub max_positions: usize,
    /// Rows of the segment table (id 0 is "no segment").
    pub max_segments: usize,
    pub dropout: f64,
    /// `false` replaces the alignment mask with global attention and drops
    /// segment embeddings.
    pub alignment: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 32,
            heads: 2,
            layers: 2,
            video_dim: 32,
            text_dim: 32,
            max_positions: 256,
            max_segments: 64,
            dropout: 0.1,
            alignment: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("heads", self.heads),
            ("video_dim", self.video_dim),
            ("text_dim", self.text_dim),
            ("max_positions", self.max_positions),
            ("max_segments", self.max_segments),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!("heads ({}) must divide width ({})", self.heads, self.width)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

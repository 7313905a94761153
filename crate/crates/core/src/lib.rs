//! Multimodal extractive summarization: an alignment-masked transformer over
//! video frames and transcript sentences, its training losses, summary
//! selection, evaluation metrics, dataset handling, and a command-line harness.

pub mod alignmask;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod selfcheck;
pub mod summarize;
pub mod train;

pub use error::{Error, Result};

//! Dense 2-D tensors with a reverse-mode tape.
//!
//! Values are held in `f64`; checkpoints and dataset files store `f32`.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{corrupt_gradient_of, Gradients, Tape, Var};
pub use tensor::Tensor;

//! A small reverse-mode differentiation engine. Values live on a [`Tape`];
//! every operation appends a node and [`Tape::backward`] walks the record in
//! reverse. Only the operators the sign models need are provided.

mod adam;
mod error;
mod gradcheck;
mod ops;
mod tape;
pub mod tensor;

pub use adam::{adam_step, effective_lr, global_norm, AdamConfig, AdamState};
pub use error::{DiffError, Result};
pub use gradcheck::{gradient_check, gradient_check_sampled, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

//! Minimal differentiable core: dense matrices, a reverse-mode tape, Adam,
//! and binary checkpoints.

mod adam;
pub mod checkpoint;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{Gradients, ParamSet, RowSets, Tape, Var};
pub use tensor::{Real, Tensor};



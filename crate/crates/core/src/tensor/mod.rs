//! Dense tensors with a reverse-mode tape, finite-difference checking and checkpoints.

mod checkpoint;
mod gradcheck;
pub(crate) mod kernels;
pub mod nn;
mod tape;
mod value;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use gradcheck::{grad_check, grad_check_report, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Usage(String),
}

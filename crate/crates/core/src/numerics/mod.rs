//! Minimal tensor algebra with reverse-mode automatic differentiation,
//! AdamW, learning-rate scheduling, and the STEN tensor file format.
//!
//! Everything the training stack needs and nothing more: no broadcasting
//! beyond bias rows, no GPU, no mixed precision. Ops are pure; a gradient
//! graph lives on one thread; parameter buffers are `Arc`-shared so batch
//! workers can run forward passes concurrently.

mod gradcheck;
mod ops;
mod optim;
mod schedule;
mod sten;
mod tensor;

pub use gradcheck::{central_diff_grad, central_diff_grad_at, max_rel_err, rel_err};
pub use optim::{adamw_step, AdamWHyper, AdamWState};
pub use schedule::LrSchedule;
pub use sten::{read_sten, write_sten_f32, write_sten_f64, StenPayload};
pub use tensor::{backward, Element, Gradients, Tensor};

/// Errors from tensor construction, ops, differentiation, and tensor io.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph")]
    GraphConsumed,
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("missing gradient for parameter {0}")]
    MissingGrad(usize),
    #[error("epoch {epoch} outside schedule range [0, {total}]")]
    EpochOutOfRange { epoch: f64, total: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("STEN: {0}")]
    Sten(String),
}

//! Dense-tensor reverse-mode automatic differentiation, Gaussian utilities,
//! and the optimizers shared by every trainable model in the crate.
//!
//! A [`Graph`] and its optimizer states are single-owner while being mutated;
//! frozen [`ParamStore`]s are plain immutable data and safe to read from
//! anywhere. There is no internal parallelism.

pub mod fd;
pub mod gauss;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use optim::{adam_step, sgd_step, AdamState, ParamStore, SgdSchedule};
pub use tensor::Tensor;

/// Errors surfaced by tensor and graph operations.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: String },
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

//! Minimal reverse-mode differentiable-computation core.
//!
//! Computation is recorded on a [`Tape`]: every operation appends a node
//! holding its value, a zero-initialized gradient buffer and enough saved
//! state to run the backward pass. Nodes only ever reference earlier
//! nodes, so the tape order is a topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Everything is double precision. A tape is owned by one execution
//! context; per-sample tapes on disjoint data may run on different
//! threads and their gradients are reduced in fixed sample order, so
//! results never depend on scheduling.

mod adam;
mod array;
mod gradcheck;
mod init;
mod tape;

pub use adam::AdamState;
pub use array::Array;
pub use gradcheck::{
    grad_check, grad_check_graph, op_battery, BlockReport, GradCheckConfig, GradCheckReport,
};
pub use init::he_init;
pub use tape::{NodeId, Phase, Tape, TppConfig, TppPool};

/// Error type shared by the tape operations and the optimizer.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("dropout probability {0} is outside [0, 1)")]
    InvalidProbability(f64),
    #[error("input width {width} is narrower than the {levels} pyramid levels")]
    InputTooNarrow { width: usize, levels: usize },
}

impl DiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        DiffError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

//! Shared error type for the core crate.

use alloc::string::String;

/// Errors produced by kernels, models, generators, and metrics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// An argument violated an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A kernel received non-finite values (the signature of a training
    /// blow-up rather than a caller mistake).
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// A vector's norm fell below the degeneracy epsilon.
    #[error("degenerate vector: norm {norm} below epsilon {eps}")]
    DegenerateVector { norm: f64, eps: f64 },

    /// A loss was requested over zero contributing positions.
    #[error("empty loss: every position is masked out")]
    EmptyLoss,

    /// An input sequence exceeds the model's maximum length.
    #[error("input length {len} exceeds max_seq_len {max}")]
    Overlength { len: usize, max: usize },

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Corpus generation could not satisfy a stated constraint.
    #[error("generation infeasible: {0}")]
    Generation(String),

    /// A training stage was started without its prerequisite artifact.
    #[error("missing dependency: {0}")]
    MissingDependency(String),

    /// Training produced a non-finite loss; parameters were rolled back.
    #[error("training diverged at epoch {epoch}, step {step}; last good epoch {last_good_epoch}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_good_epoch: usize,
    },

    /// A probe was asked to train on single-class data.
    #[error("degenerate probe: training data contains a single class")]
    DegenerateProbe,
}

impl CoreError {
    pub fn invalid(msg: impl core::fmt::Display) -> Self {
        CoreError::InvalidInput(alloc::format!("{msg}"))
    }

    pub fn shape(msg: impl core::fmt::Display) -> Self {
        CoreError::ShapeMismatch(alloc::format!("{msg}"))
    }
}

pub type CoreResult<T> = core::result::Result<T, CoreError>;

use std::io;

/// Errors produced by the simulator, the learner and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Caller broke an API precondition (e.g. stepping a finished episode).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (supported: {supported})")]
    UnsupportedVersion { found: String, supported: String },

    #[error("training diverged at episode {episode}, update {update}: {detail}")]
    TrainingDivergence {
        episode: usize,
        update: u64,
        detail: String,
    },

    #[error("search space of {size:.3e} sequences exceeds the limit of {limit:.0e}")]
    SearchTooLarge { size: f64, limit: f64 },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

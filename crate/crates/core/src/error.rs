use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("degenerate product of experts: every entry below {floor:e}")]
    DegenerateProduct { floor: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("step {step} exceeds total steps {total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("example {index} in the challenge split carries no heuristic tag")]
    Untagged { index: usize },

    #[error("requested {requested} injection samples but the pool holds {available}")]
    PoolExhausted { requested: usize, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("bad checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short name for one-line CLI error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "non_finite",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Invalid { .. } => "invalid",
            Error::Empty(_) => "empty",
            Error::DegenerateProduct { .. } => "degenerate_product",
            Error::Diverged { .. } => "diverged",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::Untagged { .. } => "untagged",
            Error::PoolExhausted { .. } => "pool_exhausted",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Config(_) => "config",
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain of the operation.
    #[error("invalid parameter `{name}`: {reason}")]
    Domain { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// RK4 integration produced a non-finite state.
    #[error("integration diverged at step {step} of {n_steps}")]
    Diverged { step: usize, n_steps: usize },

    #[error("rejection sampler acceptance rate {rate:.2e} below 1e-3")]
    LowAcceptance { rate: f64 },

    #[error("coupling plan row {0} has no mass")]
    DegenerateRow(usize),

    #[error("assignment size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Training produced a non-finite loss; carries the epoch index.
    #[error("non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain {
        name,
        reason: reason.into(),
    }
}

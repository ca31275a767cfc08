use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),

    #[error("privacy budget violation: {0}")]
    BudgetViolation(String),

    #[error("numeric failure at {context}: {message}")]
    NumericFailure { context: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub(crate) fn artifact(msg: impl Into<String>) -> Self {
        Error::InvalidArtifact(msg.into())
    }

    /// Short machine-readable tag, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::InvalidState(_) => "invalid-state",
            Error::InvalidData(_) => "invalid-data",
            Error::InvalidArtifact(_) => "invalid-artifact",
            Error::BudgetViolation(_) => "budget-violation",
            Error::NumericFailure { .. } => "numeric-failure",
            Error::Io(_) => "io-error",
            Error::Csv(_) => "invalid-data",
            Error::Json(_) => "invalid-artifact",
        }
    }

    /// Process exit code: 2 invalid input, 3 privacy-budget violation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetViolation(_) => 3,
            Error::NumericFailure { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

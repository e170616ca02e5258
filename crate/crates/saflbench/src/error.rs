//! Error types shared across the simulator.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Structured error for every fallible operation in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or model specs of two values do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration field failed validation; names the field.
    #[error("invalid config: field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// A partition spec cannot be satisfied by the given dataset.
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    /// A dataset file violated the documented text format.
    #[error("malformed dataset file, line {line}: {message}")]
    MalformedDataset { line: usize, message: String },

    /// A metrics CSV violated the documented format.
    #[error("malformed metrics file, line {line}: {message}")]
    MalformedMetrics { line: usize, message: String },

    /// A comparison spec mixes members that must share fields.
    #[error("compare spec mismatch: {0}")]
    CompareMismatch(String),

    /// A protocol invariant was violated at runtime.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid_config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Invalid command-line usage; maps to the config exit code.
    pub fn invalid_args(message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: "arguments".to_string(),
            message: message.into(),
        }
    }

    /// True for errors that should map to the CLI's config exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::InfeasiblePartition(_)
                | Error::CompareMismatch(_)
                | Error::DimensionMismatch(_)
                | Error::MalformedDataset { .. }
                | Error::MalformedMetrics { .. }
        )
    }
}

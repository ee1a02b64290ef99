use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PrxError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PrxError {
    /// A parameter is outside the domain of the model it configures.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// The caller combined arguments in a way the operation does not accept.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: line {line}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Ingestion {
        path: PathBuf,
        line: u64,
        column: Option<String>,
        message: String,
    },

    /// A predictive density fell below the underflow floor.
    #[error("predictive density underflow ({0:e})")]
    Underflow(f64),

    #[error("objective is not finite at the initial point: {0}")]
    Initialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PrxError {
    pub fn domain(msg: impl Into<String>) -> Self {
        PrxError::Domain(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        PrxError::Usage(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PrxError::Usage(_) => 2,
            PrxError::Ingestion { .. } => 3,
            PrxError::Domain(_) | PrxError::Underflow(_) | PrxError::Initialization(_) => 4,
            PrxError::Io(_) | PrxError::Csv(_) => 5,
        }
    }
}

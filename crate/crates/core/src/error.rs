//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeneError>;

#[derive(Debug, Error)]
pub enum GeneError {
    /// Operand shapes do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Malformed, inconsistent or insufficient input data.
    #[error("data error: {0}")]
    Data(String),

    /// A loss or gradient became NaN or infinite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GeneError {
    pub fn dim(msg: impl Into<String>) -> Self {
        GeneError::Dimension(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        GeneError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        GeneError::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GeneError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach context (epoch, batch, file) to a numeric or data failure.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            GeneError::Numeric(m) => GeneError::Numeric(format!("{ctx}: {m}")),
            GeneError::Data(m) => GeneError::Data(format!("{ctx}: {m}")),
            GeneError::Dimension(m) => GeneError::Dimension(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GeneError::Usage(_) => 1,
            GeneError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

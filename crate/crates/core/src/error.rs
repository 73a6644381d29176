use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("undefined correlation: {0}")]
    Correlation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the message with extra context, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{ctx}: {m}")),
            Error::Singular(m) => Error::Singular(format!("{ctx}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::NonFinite(m) => Error::NonFinite(format!("{ctx}: {m}")),
            Error::Training(m) => Error::Training(format!("{ctx}: {m}")),
            Error::Ingestion(m) => Error::Ingestion(format!("{ctx}: {m}")),
            Error::Sampling(m) => Error::Sampling(format!("{ctx}: {m}")),
            Error::Parameter(m) => Error::Parameter(format!("{ctx}: {m}")),
            Error::Correlation(m) => Error::Correlation(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Checkpoint(m) => Error::Checkpoint(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

use std::path::PathBuf;

/// Errors raised by the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on the input domain was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// The ingest stream could not be decoded at all.
    #[error("ingest error: {0}")]
    Ingest(String),

    /// A provider payload violated the annotation contract.
    #[error("invalid payload: {0}")]
    InvalidPayload(String),

    /// The provider could not produce a valid annotation after retries.
    #[error("annotation error for session {session_id}: {reason}")]
    Annotation { session_id: String, reason: String },

    /// The provider cannot be used at all (missing credential, bad endpoint).
    #[error("provider unusable: {0}")]
    ProviderUnusable(String),

    /// Invalid pipeline configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
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
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] cheerbots_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing {artifact}; run `{stage}` first")]
    MissingStage { stage: &'static str, artifact: String },
    #[error("unsupported format version {found} in {what} (expected {expected})")]
    Version { what: String, found: u32, expected: u32 },
    #[error("hash mismatch for {component}: manifest {expected}, file {found}")]
    HashMismatch { component: String, expected: String, found: String },
    #[error("checkpoint holds a `{found}` component, expected `{expected}`")]
    WrongComponent { expected: String, found: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("{0}")]
    Invalid(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        AppError::Json { context: context.into(), source }
    }

    /// Stable snake_case code for the wire protocol.
    pub fn code(&self) -> &'static str {
        match self {
            AppError::UnknownSession(_) => "unknown_session",
            AppError::EmptyMessage => "empty_message",
            AppError::MissingStage { .. } => "missing_stage",
            AppError::HashMismatch { .. } => "hash_mismatch",
            AppError::Version { .. } => "version_mismatch",
            AppError::Json { .. } | AppError::Invalid(_) => "bad_request",
            _ => "internal",
        }
    }
}

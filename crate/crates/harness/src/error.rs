use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("trace line {line}: {msg}")]
    Trace { line: u64, msg: String },

    #[error("trace is not time-ordered at line {line}")]
    Unordered { line: u64 },

    #[error("invalid workload spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Engine(#[from] hybridcache::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

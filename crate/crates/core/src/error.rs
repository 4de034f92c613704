use thiserror::Error;

/// Errors raised across the crate. Variants follow the failure classes of the
/// individual operations: bad configuration, out-of-domain arguments, numerical
/// breakdowns and violated call contracts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("agent {agent} has no trio with positive weight")]
    DegenerateAgent { agent: usize },

    #[error("size error: {0}")]
    Size(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

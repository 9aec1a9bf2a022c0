use thiserror::Error;

/// Error type shared across the solver.
#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("support error: {0}")]
    Support(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, BridgeError>;

use thiserror::Error;

/// Error type shared across the crate.
#[derive(Error, Debug)]
pub enum ExtvalError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("optimizer did not converge after {iterations} iterations (best objective {best:.6e})")]
    NonConvergence { iterations: usize, best: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExtvalError>;

impl ExtvalError {
    pub fn domain(msg: impl Into<String>) -> Self {
        ExtvalError::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        ExtvalError::Config(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        ExtvalError::Numeric(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        ExtvalError::Data(msg.into())
    }
}

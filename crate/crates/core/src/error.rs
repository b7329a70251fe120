use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("numeric failure at {location}: {detail}")]
    Numeric { location: String, detail: String },

    /// Invalid configuration, detected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// A KL divergence with the second argument lacking support.
    #[error("infinite divergence: p({index}) = {p} but q({index}) = 0")]
    InfiniteDivergence { index: usize, p: f64 },

    /// Input that makes an estimator undefined (e.g. shrinking the zero vector).
    #[error("singularity: {0}")]
    Singularity(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the sampling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("potential has no gradient oracle")]
    MissingGradient,

    #[error("noise level t = {t} is below the estimation floor {floor}")]
    BelowTimeFloor { t: f64, floor: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("theoretical budget overflows a 64-bit count: {0}")]
    BudgetOverflow(String),

    #[error("chain {chain}, step {step}: {source}")]
    Chain {
        chain: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

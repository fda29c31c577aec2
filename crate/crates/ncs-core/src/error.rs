use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("no convergence after {iterations} iterations: {what} (residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("state diverged at slot {slot} (|x| = {norm:e})")]
    Divergence { slot: usize, norm: f64 },
    #[error("memory budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

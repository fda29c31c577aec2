use thiserror::Error;

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ncs_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Failed(String),
}

impl SimError {
    /// Process exit code: 2 config, 3 divergence, 4 non-convergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Core(ncs_core::Error::Divergence { .. }) => 3,
            SimError::Core(ncs_core::Error::NonConvergence { .. }) => 4,
            SimError::Core(ncs_core::Error::Parameter(_) | ncs_core::Error::Dimension(_)) => 2,
            _ => 1,
        }
    }
}

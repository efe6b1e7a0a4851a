use thiserror::Error;

/// Failure of a run, split by exit status.
#[derive(Debug, Error)]
pub enum RunError {
    /// Bad flags, config file or parameters; exit status 1.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The experiment ran and an invariant failed; exit status 2.
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            _ => 2,
        }
    }

    /// Core errors raised while validating inputs.
    pub fn config(e: zorich_core::Error) -> Self {
        RunError::Config(e.to_string())
    }

    /// Core errors raised while running.
    pub fn experiment(e: zorich_core::Error) -> Self {
        RunError::Experiment(e.to_string())
    }
}

pub type RunResult<T> = Result<T, RunError>;

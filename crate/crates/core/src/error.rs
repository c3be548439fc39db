use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("fit failed after {iterations} iterations: {reason} (residual norm {residual_norm:.3e})")]
    FitFailure {
        reason: String,
        best_params: Vec<f64>,
        residual_norm: f64,
        iterations: usize,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid baseline: {0}")]
    InvalidBaseline(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite loss (parameter norm {param_norm:.6e})")]
    NumericalOverflow { param_norm: f64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("step size underflow at t = {time:.6e} (h = {step:.3e}); problem may be stiff")]
    Stiffness { time: f64, step: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{key}: {message} (line {line})")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

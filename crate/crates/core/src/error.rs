use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("nonstationary model: spectral radius {0:.6} >= 1")]
    NonStationary(f64),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("covariance estimation failed: {0}")]
    Covariance(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate weight kernel: {0}")]
    Kernel(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

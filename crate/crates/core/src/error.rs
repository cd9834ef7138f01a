use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not unimodular (det = {0})")]
    NotUnimodular(i64),

    #[error("eigenframe is numerically singular (condition number {0:.3e})")]
    SingularFrame(f64),

    #[error("spectrum is not real with three distinct roots; the perturbation pipeline needs a real splitting")]
    ComplexSpectrum,

    #[error("renormalization failed at iterate {iterate}: {detail}")]
    Overflow { iterate: usize, detail: String },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("center-curve tracing failed: {0}")]
    Tracing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

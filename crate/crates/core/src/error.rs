use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension {n} exceeds the dense limit of {limit}")]
    DimensionTooLarge { n: usize, limit: usize },

    #[error("negative count {0} in Poisson observation")]
    NegativeCount(i64),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("Newton iteration did not converge after {iterations} iterations (gradient {gradient:e})")]
    NoConvergence { iterations: usize, gradient: f64 },

    #[error("hyperparameter optimisation failed: {0}")]
    OptimFailed(String),

    #[error("non-positive conditional variance {value:e} at t = {t}")]
    NonPositiveConditionalVariance { t: usize, value: f64 },

    #[error("time index {t} out of range 1..{len}")]
    IndexOutOfRange { t: usize, len: usize },

    #[error("weights are not normalised (sum = {sum})")]
    UnnormalizedWeights { sum: f64 },

    #[error("all particle weights are zero at t = {t}")]
    AllWeightsZero { t: usize },

    #[error("invalid initial value: {0}")]
    InvalidInit(String),

    #[error("chain is empty")]
    EmptyChain,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

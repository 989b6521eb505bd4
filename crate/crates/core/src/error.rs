use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("negative weight {value} at atom {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, too far from 1")]
    WeightSumOutOfTolerance { sum: f64 },
    #[error("measure has no atoms")]
    EmptySupport,
    #[error("image has no positive pixel")]
    AllZeroImage,
    #[error("covariance matrix is not positive definite")]
    NonPositiveDefiniteCovariance,
    #[error("operation not supported for user-matrix costs")]
    UnsupportedCost,
    #[error("point is not part of the user cost matrix")]
    UnknownPoint,
    #[error("sinkhorn did not converge within {iterations} iterations")]
    MaxIterationsExceeded { iterations: usize },
    #[error("non-finite value in log-domain sinkhorn iteration")]
    NumericalOverflow,
    #[error("inner minimization produced no finite candidate")]
    InnerMinimizationFailed,
    #[error("unknown vertex {0} is not connected to any known vertex")]
    DisconnectedUnknownVertex(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

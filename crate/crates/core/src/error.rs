use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample covariance is singular (smallest eigenvalue {smallest:e})")]
    SingularCovariance { smallest: f64 },

    #[error("kernel matrix is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("optimizer failed: {0}")]
    OptimizerFailure(String),

    #[error("high-fidelity input row {row} is not present in the low-fidelity set")]
    NotNested { row: usize },

    #[error("too few points ({n}) for {slices} slices")]
    TooFewPoints { n: usize, slices: usize },

    #[error("response has {distinct} distinct values, cannot form {slices} slices")]
    TooFewDistinct { distinct: usize, slices: usize },

    #[error("slice {slice} has {size} points, at least 2 are required")]
    SliceTooSmall { slice: usize, size: usize },

    #[error("eigenvalue {value} at index {index} is below 1")]
    InvalidEigenvalue { index: usize, value: f64 },

    #[error("matrix columns are linearly dependent")]
    RankDeficient,

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("matrix is not orthogonal (deviation {deviation:e})")]
    NotOrthogonal { deviation: f64 },

    #[error("dimension order violated: need d_hat ({d_hat}) < s ({s}) < p ({p})")]
    DimensionOrder { d_hat: usize, s: usize, p: usize },

    #[error("coefficient is not positive at y = {at}")]
    NonPositiveCoefficient { at: f64 },

    #[error("reference vector has zero norm")]
    ZeroNorm,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

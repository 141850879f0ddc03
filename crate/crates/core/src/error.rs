use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tensor has an empty mode")]
    EmptyMode,

    #[error("dense expansion of {size} entries exceeds the cap of {cap}")]
    DenseCap { size: usize, cap: usize },

    #[error("SVD did not converge")]
    SvdFailed,

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("{0} is not a knot refinement of the coarse vector")]
    NotARefinement(String),

    #[error("point {0} outside [0, 1]")]
    OutOfDomain(f64),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("marked cells at level {level} are not nested in the previous refinement region")]
    NonNestedMarks { level: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

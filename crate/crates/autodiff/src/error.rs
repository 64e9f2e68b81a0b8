use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} out of range for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("tensor has {len} values but shape {shape:?} needs {expected}")]
    LengthMismatch {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("optimizer step without gradients (run backward first)")]
    MissingGradients,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

use alloc::string::String;

use crate::tensor::DType;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A tensor's shape violates the rank / dimension / element-count rules.
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    /// Two inputs that must line up do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected:?} tensor, found {found:?}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("label {value} at flat index {index} is out of range")]
    InvalidLabel { index: usize, value: i32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("no evaluable positions")]
    EmptyEvaluation,
    #[error("insufficient calibration data: {0}")]
    InsufficientData(String),
    #[error("degenerate calibration data: metric does not vary with sigma")]
    DegenerateData,
    #[error("curve fit did not converge")]
    NonConvergence,
    #[error("fitted curve is invalid: {0}")]
    InvalidFit(String),
    #[error("target {0} is outside [0, 1]")]
    InvalidTarget(f64),
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
    #[error("could not place shape {shape} after {attempts} attempts")]
    ScenePlacement { shape: usize, attempts: u32 },
}

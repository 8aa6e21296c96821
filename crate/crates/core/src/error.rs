use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rle counts sum to {actual}, expected {expected}")]
    CountMismatch { expected: u64, actual: u64 },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("candidates come from more than one source image ({0} and {1})")]
    MixedSources(String, String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("empty input")]
    EmptyInput,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("non-finite value at step {0}")]
    NonFiniteValue(usize),
    #[error("denoiser failed: {0}")]
    DenoiserFailure(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

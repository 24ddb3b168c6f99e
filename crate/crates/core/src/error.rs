use thiserror::Error;

/// Errors produced by codecs, quantizers, GPTQ and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite element")]
    NonFinite,

    #[error("invalid scale {0}: scales must be positive and finite")]
    InvalidScale(f64),

    #[error("scale code {code:#x} is reserved or outside the {format} code space")]
    InvalidCode { code: u64, format: String },

    #[error("int8 linear scale format used without a calibration range")]
    Uncalibrated,

    #[error("{what}: dimension {dim} is not divisible by {divisor}")]
    Divisibility {
        what: &'static str,
        dim: usize,
        divisor: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cholesky factorization failed at column {column}; increase the dampening factor")]
    Cholesky { column: usize },

    #[error("singular matrix in exact re-inversion at step {step}")]
    Singular { step: usize },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

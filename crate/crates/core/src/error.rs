use thiserror::Error;

/// Errors produced by the library.
///
/// The variants map onto the CLI exit-code classes: `Invalid` and `Shape`
/// are usage/validation failures, `Format` covers malformed or inconsistent
/// files, `Numeric` covers non-finite values during training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

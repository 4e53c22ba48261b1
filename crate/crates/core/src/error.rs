use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised while decoding one of the binary formats.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("unrecognized format: expected magic {expected:?}, found {found:?}")]
    UnrecognizedFormat { expected: String, found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("mask voxel {index} has non-binary value {value}")]
    InvalidMask { index: usize, value: u8 },
    #[error("array `{name}`: {detail}")]
    DimMismatch { name: String, detail: String },
    #[error("array `{0}` missing from checkpoint")]
    MissingArray(String),
    #[error("unexpected array `{0}` in checkpoint")]
    UnexpectedArray(String),
    #[error("array name is not valid UTF-8")]
    InvalidName,
    #[error("non-finite value in array `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or volume shapes are inconsistent with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A configuration value is outside its valid domain.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Input data violates an operation precondition.
    #[error("invalid data: {0}")]
    Data(String),
    /// NaN/inf encountered during training or inference.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A distance metric is undefined (one of the point sets is empty).
    #[error("undefined distance: {0}")]
    UndefinedDistance(&'static str),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("bad magic bytes in tensor file")]
    BadMagic,

    #[error("unsupported tensor file format: {0}")]
    UnsupportedFormat(String),

    #[error("tensor dims overflow")]
    DimsOverflow,

    #[error("truncated tensor payload")]
    Truncated,

    #[error("bad PGM file: {0}")]
    BadPgm(String),

    #[error("singular matrix in {method} discretization")]
    SingularMatrix { method: &'static str },

    #[error("numeric range exceeded: {0}")]
    NumericRange(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate contribution map: no positive contributions")]
    DegenerateMap,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

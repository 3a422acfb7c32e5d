use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("variant {variant} requires {missing}")]
    MissingPrep {
        variant: &'static str,
        missing: &'static str,
    },
    #[error("preprocessed data does not match the mask or block spec: {0}")]
    PrepMismatch(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse failures for the `BBMK` mask and `BBLK` occupancy files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimension {0} overflows the addressable payload size")]
    DimensionOverflow(u64),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("invalid block size {0}")]
    InvalidBlockSize(u32),
}

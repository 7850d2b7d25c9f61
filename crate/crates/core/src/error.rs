use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("empty range")]
    EmptyRange,

    #[error("flow fields are not contiguous at index {index}")]
    NonContiguous { index: usize },

    #[error("missing header in {0}")]
    MissingHeader(PathBuf),

    #[error("header checksum mismatch in {0}")]
    HeaderChecksum(PathBuf),

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown codec id {0}")]
    UnknownCodec(u8),

    #[error("chunk checksum mismatch in {file} block {block}")]
    ChunkChecksum { file: &'static str, block: usize },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("flow coverage missing for [{t0}, {t1}] us")]
    FlowCoverage { t0: i64, t1: i64 },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("degenerate normalizer: identity-warp objective is zero")]
    DegenerateNormalizer,

    #[error("empty event slice")]
    EmptySlice,

    #[error("non-finite objective value")]
    NonFinite,

    #[error("empty mask")]
    EmptyMask,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding: {0}")]
    Png(String),
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::Png(e.to_string())
    }
}

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::Png(e.to_string())
    }
}

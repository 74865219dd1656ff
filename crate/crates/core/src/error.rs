use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data length {len} does not match shape {rows}x{cols}")]
    ShapeData {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("quantization scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("coordinate ({row}, {col}) outside {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("outlier entries must be sorted by (row, col) without duplicates")]
    UnsortedOutliers,

    #[error("packed level buffer holds {have} bytes, {need} required for {count} levels")]
    ShortLevels {
        have: usize,
        need: usize,
        count: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{path}: {detail}")]
    TensorFile { path: PathBuf, detail: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line tool: 64 for bad arguments,
    /// 66 for unreadable or malformed input, 70 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidScale(_) => 64,
            Error::Io { .. }
            | Error::Format(_)
            | Error::TensorFile { .. }
            | Error::Manifest(_)
            | Error::ShapeData { .. }
            | Error::EmptyMatrix { .. }
            | Error::NonFinite { .. } => 66,
            _ => 70,
        }
    }
}

/// Failures while decoding a quantized tensor file.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"EZQT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated {section} section at byte offset {offset}")]
    Truncated { section: &'static str, offset: u64 },

    #[error("outliers not sorted by (row, col) at byte offset {offset}")]
    UnsortedOutliers { offset: u64 },

    #[error("format violation in {section} at byte offset {offset}: {detail}")]
    Violation {
        section: &'static str,
        offset: u64,
        detail: String,
    },
}

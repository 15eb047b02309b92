use std::path::PathBuf;

/// Errors produced by the pipeline.
///
/// Variants are grouped loosely into invalid arguments (caller bugs or bad
/// configuration), numerical failures, and file-format problems.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("event ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("event at t={t} lies outside the encoding range [{lo}, {hi}]")]
    OutsideTemporalRange { t: i64, lo: i64, hi: i64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("point maps to infinity under the homography")]
    PointAtInfinity,

    #[error("degenerate point configuration")]
    Degenerate,

    #[error("no model with at least 4 inliers")]
    NoConsensus,

    #[error("non-finite gradient in layer {0}")]
    NonFiniteGradient(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("events are not sorted by timestamp (index {0})")]
    Unsorted(usize),

    #[error("layer {layer}: expected shape {expected:?}, found {actual:?}")]
    LayerShape {
        layer: String,
        expected: [usize; 4],
        actual: [usize; 4],
    },

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    /// Whether the error stems from input data rather than from how the
    /// library was called.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

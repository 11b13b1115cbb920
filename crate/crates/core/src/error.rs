use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest row {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("NormalsOnlyViolation: {path} is labeled abnormal but assigned to the {split} split")]
    NormalsOnlyViolation { path: String, split: String },

    #[error("MissingMask: abnormal test entry {path} has no mask path")]
    MissingMask { path: String },

    #[error("path {path} appears in more than one split")]
    DuplicatePath { path: String },

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("NotSquare: image is {height}x{width}")]
    NotSquare { height: usize, width: usize },

    #[error("NotDivisibleBy8: side {0} is not a multiple of 8")]
    NotDivisibleBy8(usize),

    #[error("pixel value {value} at index {index} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("InsufficientForeground: could not place two disjoint patches after {attempts} attempts")]
    InsufficientForeground { attempts: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid class index {index} (K = {classes})")]
    InvalidClass { index: usize, classes: usize },

    #[error("DivergenceDetected: non-finite gradient at parameter {index}")]
    DivergenceDetected { index: usize },

    #[error("CorruptCheckpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint config incompatible: {0}")]
    ConfigMismatch(String),

    #[error("empty train split")]
    EmptyTrainSplit,

    #[error("metric undefined: {0}")]
    MetricUndefined(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

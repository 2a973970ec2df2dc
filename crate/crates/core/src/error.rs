use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("{op} needs at least {min}x{min} pixels, got {height}x{width}")]
    TooSmall {
        op: &'static str,
        min: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("failed to encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("missing frame {0}")]
    MissingFrame(String),

    #[error("no frames matching {pattern} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },

    #[error("frame {frame} is {found}, expected {expected}")]
    FrameDimension {
        frame: String,
        expected: String,
        found: String,
    },

    #[error("non-finite gradient at channel {channel}, row {row}, column {col}")]
    NonFiniteGradient { channel: usize, row: usize, col: usize },

    #[error("oracle {name} failed gradient admission: relative error {worst_rel_err:.3e} > {tolerance:.1e}")]
    OracleRejected {
        name: String,
        worst_rel_err: f64,
        tolerance: f64,
    },

    #[error("unknown metric: {0}")]
    UnknownMetric(String),

    #[error("unknown attack: {0}")]
    UnknownAttack(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gain alignment gave up after {0} probes")]
    ProbeLimit(usize),

    #[error("report needs at least one row")]
    EmptyReport,

    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("time grid is not uniform: relative spacing deviation {deviation:e} at row {line}")]
    NonUniformGrid { line: usize, deviation: f64 },

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("segment {start}..={end} out of bounds for {n_steps} steps")]
    OutOfBounds {
        start: usize,
        end: usize,
        n_steps: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("path of {requested} steps exceeds the exact-covariance limit of {limit}")]
    SizeLimit { requested: usize, limit: usize },

    #[error("no motion: every step is zero, diffusion estimate undefined")]
    NoMotion,

    #[error("no motion in the {side} window at index {index}")]
    NoMotionWindow { index: usize, side: &'static str },

    #[error("window size {k} exceeds half the trajectory length ({n_steps} steps)")]
    WindowTooLarge { k: usize, n_steps: usize },

    #[error("degenerate calibration: {0}")]
    Degenerate(String),

    #[error("threshold cache {path} unreadable: {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    #[error("external detector failed: {0}")]
    External(String),
}

impl Error {
    /// Stable variant name, used by the CLI when reporting failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::NonUniformGrid { .. } => "NonUniformGrid",
            Error::TooShort(_) => "TooShort",
            Error::IoFailure { .. } => "IoFailure",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidParam(_) => "InvalidParam",
            Error::SizeLimit { .. } => "SizeLimit",
            Error::NoMotion => "NoMotion",
            Error::NoMotionWindow { .. } => "NoMotionWindow",
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::Degenerate(_) => "Degenerate",
            Error::CorruptCache { .. } => "CorruptCache",
            Error::External(_) => "External",
        }
    }

    /// `IoFailure` on `path`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}

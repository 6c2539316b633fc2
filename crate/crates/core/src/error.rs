//! Crate-wide error type shared by every pipeline stage.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by ingestion, processing and evaluation stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("no frames found in {0}")]
    NoFrames(PathBuf),

    #[error("{what}: dimension mismatch, expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        what: String,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("mask count mismatch: {masks} != {frames}")]
    MaskCountMismatch { masks: usize, frames: usize },

    #[error("frame {w}x{h} smaller than the {min}x{min} expansion neighborhood")]
    FrameTooSmall { w: usize, h: usize, min: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("cutoff {cutoff_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    CutoffOutOfRange { cutoff_hz: f64, nyquist_hz: f64 },

    #[error("insufficient peaks: found {found}, need at least 2")]
    InsufficientPeaks { found: usize },

    #[error("series do not overlap in time")]
    NoOverlap,

    #[error("recording shorter than averaging window: {duration_s:.1} s < {window_s:.1} s")]
    RecordingTooShort { duration_s: f64, window_s: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn dims(
        what: impl Into<String>,
        expected: (usize, usize),
        got: (usize, usize),
    ) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        }
    }
}

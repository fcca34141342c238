//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rotation angle at or near pi: the log map has no principal branch there.
    #[error("rotation angle {angle} is within {margin} of pi; log map branch is ambiguous")]
    BranchAmbiguity { angle: f64, margin: f64 },

    /// Point projects behind the camera (camera-frame depth below the near plane).
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    /// Index or frame id outside the valid range.
    #[error("{what} {index} out of range 0..{len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Loaded data failed a structural or numeric validation check.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Malformed on-disk data, with file/field context.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A loss term evaluated to NaN/inf; names the offending term.
    #[error("non-finite value in loss term '{term}'")]
    NonFiniteLoss { term: &'static str },

    /// Optimization diverged (non-finite loss during fitting).
    #[error("optimization diverged at {phase} step {step}: {detail}")]
    Divergence {
        phase: &'static str,
        step: usize,
        detail: String,
    },

    /// Forward/backward contract violated (mismatched shapes or missing records).
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<V> = std::result::Result<V, Error>;

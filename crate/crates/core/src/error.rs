use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::VoxelCoord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Axis names used in bounds diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    T,
    Y,
    X,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::T => "t",
            Axis::Y => "y",
            Axis::X => "x",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {coord:?} out of bounds on axis {axis}: {value} not in [0, {extent})")]
    OutOfBounds {
        coord: VoxelCoord,
        axis: Axis,
        value: i64,
        extent: usize,
    },

    #[error("duplicate coordinate {0:?}")]
    DuplicateCoord(VoxelCoord),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("container format error: {0}")]
    Format(#[from] FormatError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Binary container and checkpoint decoding failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated payload: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid header: {0}")]
    Header(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

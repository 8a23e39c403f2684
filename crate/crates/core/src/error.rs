use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("face {0} repeats a vertex index")]
    RepeatedIndex(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh has zero spatial extent")]
    ZeroExtent,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("signed distances have not been computed for this grid")]
    MissingDistances,

    #[error("mesh has no vertex normals")]
    MissingNormals,

    #[error("no active cells: the zero level set does not cross the grid")]
    NoActiveCells,

    #[error("size mismatch in {what}: expected {expected}, got {actual}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite loss at iteration {iteration} (data={data}, smooth={smooth}, normal={normal})")]
    NonFiniteLoss {
        iteration: usize,
        data: f64,
        smooth: f64,
        normal: f64,
    },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

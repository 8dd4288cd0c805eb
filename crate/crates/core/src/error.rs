use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point cloud has no ground-truth normals")]
    MissingNormals,

    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("unstable network output: pre-normalization norm {0:e}")]
    UnstableOutput(f64),

    #[error("checkpoint config hash {found:016x} does not match current config {expected:016x}")]
    ConfigMismatch { expected: u64, found: u64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::UnstableOutput(_))
    }
}

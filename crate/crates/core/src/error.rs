use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid lens prescription: {0}")]
    Lens(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at `{key}`: {message}")]
    Schema { key: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("stop images to infinity (afocal sub-system)")]
    DegenerateImaging,

    #[error("underdetermined fit: {records} usable records for {coefficients} coefficients")]
    Underdetermined { records: usize, coefficients: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

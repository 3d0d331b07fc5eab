//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("kernel domain violation: {0}")]
    KernelDomain(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),

    #[error("model archive: {0}")]
    Archive(String),

    #[error("model archive version {found} is not supported (max {supported})")]
    ArchiveVersion { found: u32, supported: u32 },

    #[error("model archive checksum mismatch (file is truncated or corrupt)")]
    ArchiveChecksum,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

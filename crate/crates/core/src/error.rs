use thiserror::Error;

/// Failure modes surfaced by the library.
///
/// The split matters to callers: `Config`, `Shape`, `Usage`, `Corrupt` and
/// `Io` mean the inputs were bad; `Incompatible` means two otherwise valid
/// artifacts cannot be combined; `Numerical` means training produced a
/// non-finite value and the run was aborted rather than silently clipped.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("stale gradient tape: {0}")]
    StaleTape(String),

    #[error("incompatible modules: {0}")]
    Incompatible(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("corrupt artifact: {0}")]
    Corrupt(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn incompatible(msg: impl Into<String>) -> Self {
        Error::Incompatible(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}

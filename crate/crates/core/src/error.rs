use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt payload {path}: {detail}")]
    Corruption { path: PathBuf, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate embedding: norm {norm:e} is not above {eps:e}")]
    DegenerateEmbedding { norm: f64, eps: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("network is frozen; parameter updates are rejected")]
    Frozen,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Training { epoch: usize, step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for validation/config problems, 2 for runtime
    /// and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_)
            | Error::Validation(_)
            | Error::Schedule(_)
            | Error::InsufficientData(_)
            | Error::Config(_)
            | Error::Usage(_) => 1,
            Error::Corruption { .. }
            | Error::DegenerateEmbedding { .. }
            | Error::Numeric(_)
            | Error::Frozen
            | Error::Training { .. }
            | Error::Io { .. } => 2,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;

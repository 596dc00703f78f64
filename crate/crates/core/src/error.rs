use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("{op} requires a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },

    #[error("Langevin chain diverged at step {step}: |l|_inf = {norm:e} (eta = {eta}, steps = {steps})")]
    Divergence {
        step: usize,
        norm: f64,
        eta: f64,
        steps: usize,
    },

    #[error("non-finite Langevin state at step {step}")]
    NonFiniteStep { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("decode exceeded maximum length of {max} tokens")]
    Truncated { max: usize },

    #[error("numeric check failed: {0}")]
    NumericCheck(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

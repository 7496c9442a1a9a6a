use std::path::PathBuf;

/// Errors raised by the engine, model, training and data layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A shape or argument contract between operators was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A hyperparameter or operator parameter is outside its legal range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A tensor produced a NaN or infinity.
    #[error("non-finite value in node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    /// A statistic is undefined for the given input (single-class ROC, all-zero differences).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config {path}:{line}: {msg}")]
    ConfigParse { path: String, line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    ConfigValue { key: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;

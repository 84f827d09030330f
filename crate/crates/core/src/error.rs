//! Error types shared across the crate.

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor math, data handling, training, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A parameter is outside its valid range.
    #[error("invalid parameter {name}: {detail}")]
    Param { name: String, detail: String },

    /// A non-finite value appeared during forward or backward computation.
    #[error("non-finite value in {context}")]
    Numeric { context: String },

    /// An API contract was violated (e.g. backward on a non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed or out of range.
    #[error("invalid input: {0}")]
    Input(String),

    /// A metric is undefined for the given data (e.g. zero variance).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Configuration file is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A data file could not be parsed; carries file and line context.
    #[error("parse error in {file} line {line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },

    /// Underlying I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn param(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Param {
            name: name.into(),
            detail: detail.into(),
        }
    }

    pub fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, detail: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

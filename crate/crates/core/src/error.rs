use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("pseudo-label selection too small: {found} < q_min {q_min}")]
    SelectionTooSmall { found: usize, q_min: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("missing embedding tokens: {}", .0.join(", "))]
    MissingTokens(Vec<String>),

    #[error("malformed embedding file at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("inconsistent embedding dimension at line {line}: expected {expected}, found {found}")]
    InconsistentDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("config syntax error at line {line}: {msg}")]
    ConfigSyntax { line: usize, msg: String },

    #[error("invalid config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("model dimension mismatch: {0}")]
    ModelDimension(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

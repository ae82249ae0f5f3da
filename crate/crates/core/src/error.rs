use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports. The CLI maps each variant to a
/// stable category string via [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range (limit {limit}) in {what}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("requested {requested} but only {available} available")]
    Range { requested: usize, available: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: expected {expected} bytes, found {actual}")]
    Corruption { expected: u64, actual: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("teacher logits missing for {} sentence(s): {}", .0.len(), preview_ids(.0))]
    Coverage(Vec<usize>),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown id: {0}")]
    Lookup(String),

    #[error("{0}")]
    Usage(String),
}

fn preview_ids(ids: &[usize]) -> String {
    let shown: Vec<String> = ids.iter().take(10).map(|i| i.to_string()).collect();
    if ids.len() > 10 {
        format!("{}, ...", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Short machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Dimension { .. } => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Index { .. } => "index",
            Error::Range { .. } => "range",
            Error::EmptySequence => "empty-sequence",
            Error::NonFinite(_) => "non-finite",
            Error::Format(_) => "format",
            Error::Corruption { .. } => "corruption",
            Error::Config(_) => "config",
            Error::Coverage(_) => "coverage",
            Error::Alignment(_) => "alignment",
            Error::Contract(_) => "contract",
            Error::Lookup(_) => "lookup",
            Error::Usage(_) => "usage",
        }
    }
}

use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unknown {kind} label `{label}`")]
    Vocabulary { kind: &'static str, label: String },

    #[error("alignment pair ({left}, {right}) does not span the two graphs")]
    Partition { left: String, right: String },

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op}: dimension {dim} must be even")]
    OddDimension { op: &'static str, dim: usize },

    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar((usize, usize)),

    #[error("entity {0} has no outgoing edges")]
    DeadEnd(u32),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid value for `{field}`: {msg}")]
    InvalidConfig { field: String, msg: String },

    #[error("training diverged for {genotype} at batch {batch}: {msg}")]
    Diverged {
        genotype: String,
        batch: usize,
        msg: String,
    },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("{0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

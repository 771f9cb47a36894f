use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema violation in {record}: field `{field}`: {message}")]
    Schema {
        record: String,
        field: String,
        message: String,
    },

    #[error("label out of range in {record}: expression {label} >= num_classes {num_classes}")]
    LabelOutOfRange {
        record: String,
        label: usize,
        num_classes: usize,
    },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit status for the command line: 1 for bad input, 2 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Schema { .. }
            | Error::LabelOutOfRange { .. }
            | Error::UnknownAttribute(_)
            | Error::Config { .. }
            | Error::Parse { .. }
            | Error::Checkpoint(_)
            | Error::Invalid(_) => 1,
            Error::NonFinite(_) | Error::Io { .. } | Error::Image { .. } => 2,
        }
    }
}

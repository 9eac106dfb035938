use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("table has no data rows")]
    EmptyTable,

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("attribute `{attribute}`: value `{value}` is not a finite number")]
    NotNumeric { attribute: String, value: String },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("attribute `{0}` has no non-null values")]
    EmptyDomain(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("adding edge {parent} -> {child} would create a cycle")]
    Cycle { parent: String, child: String },

    #[error("edge {parent} -> {child} does not exist")]
    MissingEdge { parent: String, child: String },

    #[error("invalid constraint for `{attribute}`: {reason}")]
    InvalidConstraint { attribute: String, reason: String },

    #[error("external predicate failed: {0}")]
    ExternalPredicate(String),

    #[error("tables differ in shape: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("edit step {step} failed: {source}")]
    EditStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

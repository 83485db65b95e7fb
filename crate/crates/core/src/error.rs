use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("schema mismatch: column `{0}` is declared in the schema but missing from the header")]
    MissingColumn(String),

    #[error("duplicate header `{0}`")]
    DuplicateHeader(String),

    #[error("row {row}, column `{column}`: cannot parse `{token}` as a number")]
    ParseNumber { row: usize, column: String, token: String },

    #[error("row {row}, column `{column}`: unknown category `{token}`")]
    UnknownCategory { row: usize, column: String, token: String },

    #[error("row {row}: label `{token}` is not 0 or 1")]
    InvalidLabel { row: usize, token: String },

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("only one class present{}", context_suffix(.0))]
    SingleClass(String),

    #[error("column `{0}` has missing cells; complete data required")]
    IncompleteColumn(String),

    #[error("column `{column}`: k = {k} exceeds the {available} training rows observing it")]
    NotEnoughNeighbors { column: String, k: usize, available: usize },

    #[error("feature `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Model(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn context_suffix(ctx: &str) -> String {
    if ctx.is_empty() {
        String::new()
    } else {
        format!(" ({ctx})")
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Json(_) => ErrorClass::Config,
            Error::ZeroVariance(_) | Error::NonFinite { .. } | Error::Numeric(_) => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }
}

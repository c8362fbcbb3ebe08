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

    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("value error at row {row}: {message}")]
    Value { row: usize, message: String },

    #[error("duplicate issue id `{id}` in dataset `{dataset}`")]
    DuplicateId { dataset: String, id: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty training set: {0}")]
    EmptyTraining(String),

    #[error("FARSEC is undefined without security bug reports in the training set")]
    NoSecurityReports,

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("coverage error: {missing} id(s) missing [{missing_ids}], {extra} unexpected id(s) [{extra_ids}]")]
    Coverage {
        missing: usize,
        missing_ids: String,
        extra: usize,
        extra_ids: String,
    },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("{context}: {source}")]
    Experiment {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn coverage(missing: &[String], extra: &[String]) -> Self {
        Error::Coverage {
            missing: missing.len(),
            missing_ids: missing.join(","),
            extra: extra.len(),
            extra_ids: extra.join(","),
        }
    }

    /// Attaches experiment context, e.g. `wpp derby`.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Experiment {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset too small: need at least {needed} items, got {got}")]
    DatasetTooSmall { needed: usize, got: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("row {row}: probabilities sum to {sum}, expected 1")]
    ProbabilitySum { row: String, sum: f64 },

    #[error("item {item} has no prediction for model {model}")]
    MissingModel { item: String, model: String },

    #[error("item {0} missing from base predictions")]
    MissingItem(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty model set")]
    EmptyModelSet,

    #[error("minority class has {got} samples, need at least {needed}")]
    MinorityTooSmall { needed: usize, got: usize },

    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("feature schema mismatch: expected {expected}, got {actual}")]
    SchemaMismatch { expected: String, actual: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        index: usize,
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn csv_reader(path: impl AsRef<std::path::Path>) -> Result<csv::Reader<std::fs::File>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

pub(crate) fn csv_writer(path: impl AsRef<std::path::Path>) -> Result<csv::Writer<std::fs::File>> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

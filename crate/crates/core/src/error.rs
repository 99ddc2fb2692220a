use thiserror::Error;

use crate::stream::Label;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance does not conform to schema: {0}")]
    SchemaMismatch(String),

    #[error("label {0} is not binary; label noise needs labels in {{0, 1}}")]
    UnsupportedLabel(Label),

    #[error("label {label} is unknown to a posterior over {classes} classes")]
    UnknownLabel { label: Label, classes: usize },

    #[error("cannot train on an empty training set")]
    EmptyTrainingSet,

    #[error("score history is empty")]
    EmptyHistory,

    #[error("density estimator needs at least one sample")]
    EmptySample,

    #[error("value {0} lies outside [0, 1]")]
    OutsideUnitInterval(f64),

    #[error("bet value {0} is not strictly positive")]
    NonPositiveBet(f64),

    #[error("timestamp {got} does not follow {previous}")]
    OutOfOrder { previous: u64, got: u64 },

    #[error("record has no available predictions")]
    NoAvailablePredictions,

    #[error("standard error of the accuracy difference is zero; the test is undefined")]
    DegenerateTest,

    #[error("record mismatch: {0}")]
    RecordMismatch(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("file is empty (no header row)")]
    EmptyFile,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from input data (files, rows, labels) rather
    /// than from configuration or program state.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::SchemaMismatch(_)
                | Error::UnsupportedLabel(_)
                | Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::EmptyFile
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::RecordMismatch(_)
                | Error::OutOfOrder { .. }
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Schema(_))
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("row {row}: expected {expected} columns, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {col}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        col: usize,
        value: String,
    },

    #[error("row {row}, column {col}: non-finite value")]
    NonFinite { row: usize, col: usize },

    #[error("invalid window: {0}")]
    Window(String),

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("infeasible DTW band: radius {radius} < length difference {diff}")]
    InfeasibleBand { radius: usize, diff: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("missing artifact for stage `{stage}`: {detail}")]
    MissingStage { stage: String, detail: String },

    #[error("stale artifact for stage `{stage}`: {detail}")]
    StaleStage { stage: String, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Empty(_) => "empty",
            Error::RowLength { .. } => "row_length",
            Error::NonNumeric { .. } => "non_numeric",
            Error::NonFinite { .. } => "non_finite",
            Error::Window(_) => "window",
            Error::TooShort(_) => "too_short",
            Error::InfeasibleBand { .. } => "infeasible_band",
            Error::Shape(_) => "shape",
            Error::InvalidParam(_) => "invalid_param",
            Error::Diverged(_) => "diverged",
            Error::MissingStage { .. } => "missing_stage",
            Error::StaleStage { .. } => "stale_stage",
            Error::Format(_) => "format",
            Error::Json(_) => "json",
        }
    }
}

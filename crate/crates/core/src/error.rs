use std::path::PathBuf;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid tape state: {0}")]
    State(String),

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("degenerate graph: row {row} has zero sum")]
    DegenerateGraph { row: usize },

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: non-numeric cell {value:?} at (row {row}, col {col})")]
    Cell {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{path}: NaN values in rows {rows:?}")]
    NanRows { path: PathBuf, rows: Vec<usize> },

    #[error("split `{split}` has {len} steps, needs at least {needed} for one window")]
    InsufficientLength {
        split: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("unstable generator: spectral radius {radius:.6} >= 1 (lower alpha below 1)")]
    Unstable { radius: f64 },

    #[error("training diverged at epoch {epoch}, step {step}; last finite loss {last_finite:?}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite: Option<f64>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to locate the
/// offending input (file coordinates, shapes, sample ids) without a debugger.
#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error in {path} at line {line}, column {column}: {detail}")]
    CsvCell {
        path: String,
        line: usize,
        column: usize,
        detail: String,
    },

    #[error("malformed input in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("duplicate {kind} id `{id}` in {path}")]
    DuplicateId {
        kind: &'static str,
        id: String,
        path: String,
    },

    #[error("preprocessing step `{step}` applied out of order (matrix is already {stage})")]
    OutOfOrder { step: &'static str, stage: String },

    #[error(
        "reference normalization impossible: housekeeping genes missing from {which}: {genes:?}"
    )]
    MissingHousekeeping {
        which: &'static str,
        genes: Vec<String>,
    },

    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op} expects a scalar (1-element tensor), got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid risk set: {detail}")]
    InvalidRiskSet { detail: String },

    #[error("invalid configuration: {detail}")]
    Config { detail: String },

    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: &'static str },

    #[error("no gradient recorded for parameter `{name}`; call backward before stepping")]
    MissingGradient { name: String },

    #[error("metric undefined: {detail}")]
    UndefinedMetric { detail: String },

    #[error("ipcw weight is zero at time {time}; restrict evaluation to a smaller horizon")]
    ZeroWeight { time: f64 },

    #[error("risk stratification produced an empty {which} group")]
    EmptyStratum { which: &'static str },

    #[error("attention over a fully masked key sequence ({which})")]
    DegenerateAttention { which: &'static str },

    #[error("sample `{id}` has no patch features but the fusion model requires them")]
    MissingPatches { id: String },

    #[error("dataset invalid: {detail}")]
    Dataset { detail: String },

    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config {
            detail: detail.into(),
        }
    }

    pub fn dataset(detail: impl Into<String>) -> Self {
        Error::Dataset {
            detail: detail.into(),
        }
    }
}

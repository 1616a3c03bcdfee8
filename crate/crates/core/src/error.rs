//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // numerics
    #[error("vector has (near-)zero norm")]
    ZeroNorm,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value encountered: {0}")]
    NonFiniteEvaluation(String),

    // encoder
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    // losses
    #[error("empty batch")]
    EmptyBatch,
    #[error("row {0} has no negatives")]
    EmptyNegatives(usize),
    #[error("task {task} cannot be trained on a {batch} batch")]
    TaskBatchMismatch { task: String, batch: &'static str },

    // mrl
    #[error("dimension {dim} out of range (vector length {len})")]
    DimOutOfRange { dim: usize, len: usize },

    // data
    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: schema error in field `{field}`: {message}")]
    SchemaError {
        line: usize,
        field: String,
        message: String,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("label set needs at least 2 labels, got {0}")]
    DegenerateLabelSet(usize),
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),

    // mining
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("mining window is empty: {0}")]
    WindowEmpty(String),

    // synth
    #[error("authentication failed (status {0})")]
    AuthError(u16),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("request timed out after {0} attempts")]
    Timeout(u32),
    #[error("service error (status {status}): {message}")]
    ServiceError { status: u16, message: String },
    #[error("response is not JSON: {0}")]
    NotJson(String),
    #[error("response is missing key `{0}`")]
    MissingKey(String),
    #[error("{which} has {words} words, needs at least {min}")]
    TooShort {
        which: String,
        words: usize,
        min: usize,
    },
    #[error("no mock response for request {0}")]
    MissingFixture(String),

    // trainer
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("loss became non-finite at step {step} ({task})")]
    AbortOnNonFinite { step: usize, task: String },
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("checkpoint header does not match its arrays: {0}")]
    HeaderShapeMismatch(String),

    // eval
    #[error("dataset is missing its {0} split")]
    MissingSplit(&'static str),
    #[error("need at least 2 gold clusters, got {0}")]
    DegenerateClusters(usize),
    #[error("pair labels contain a single class")]
    SingleClass,
    #[error("query {0} has no relevant documents")]
    NoRelevantDocs(usize),
    #[error("input has zero variance")]
    ConstantInput,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
}

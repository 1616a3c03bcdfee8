//! Exit codes. Scripts depend on these values.

use std::fmt;

use mtembed::Error;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const DATA: i32 = 3;
pub const NON_FINITE: i32 = 4;
pub const DIM: i32 = 5;
pub const RUNTIME: i32 = 6;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn code_for(e: &Error) -> i32 {
    use Error::*;
    match e {
        InvalidConfig(_) | BatchTooSmall(_) => CONFIG,
        DimOutOfRange { .. } => DIM,
        NonFiniteEvaluation(_) | NonFiniteGradient | AbortOnNonFinite { .. } => NON_FINITE,
        Io { .. } | Json(_) | ParseError { .. } | SchemaError { .. } | EmptyDataset | EmptyText | UnknownLabel(_)
        | DegenerateLabelSet(_) | EmptyCorpus | WindowEmpty(_) | MissingFixture(_) | BadMagic
        | VersionMismatch { .. } | TruncatedFile | HeaderShapeMismatch(_) | MissingSplit(_)
        | DegenerateClusters(_) | SingleClass | NoRelevantDocs(_) | EmptyInput | LengthMismatch { .. } => DATA,
        _ => RUNTIME,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(code_for(&e), e.to_string())
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Variants fall into two classes, see [`Error::is_validation`]: problems with
/// the shape of the inputs or configuration, and problems discovered while
/// running (missing files, incomplete score coverage, degenerate data).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    #[error("duplicate knowledge snippet {0}")]
    DuplicateSnippet(String),

    #[error("{context}: field `{field}` is empty after normalization")]
    EmptyField { context: String, field: &'static str },

    #[error("labels reference unknown dialogue `{0}`")]
    DanglingLabel(String),

    #[error("dialogue `{dialogue_id}`: turn {turn} out of range (dialogue has {len} turns)")]
    TurnOutOfRange {
        dialogue_id: String,
        turn: usize,
        len: usize,
    },

    #[error("dialogue `{dialogue_id}`: turn {turn} is not a user turn")]
    NotUserTurn { dialogue_id: String, turn: usize },

    #[error("{context}: knowledge {key} does not resolve in the knowledge base")]
    UnresolvedKnowledge { context: String, key: String },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("duplicate record: {0}")]
    DuplicateRecord(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("need at least {needed} points, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{context}: score {score} outside [0, 1]")]
    ScoreOutOfRange { context: String, score: f64 },

    #[error("unknown scope: {0}")]
    UnknownScope(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for input/configuration problems (CLI exit code 1); false for
    /// runtime and data problems (exit code 2).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFinite(_)
                | Error::TooFewPoints { .. }
                | Error::UnknownScope(_)
                | Error::MissingData(_)
                | Error::CoverageMismatch(_)
        )
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }
}

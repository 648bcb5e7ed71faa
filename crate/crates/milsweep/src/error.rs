use std::io;
use std::path::PathBuf;

use milsweep_core::{JournalError, MilError, PrunerError, QueryError, SamplerError, SpaceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal {path} line {line}: {reason}")]
    CorruptJournal { path: PathBuf, line: usize, reason: String },
    #[error("journal {0} has no study header")]
    MissingHeader(PathBuf),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Pruner(#[from] PrunerError),
    #[error(transparent)]
    Mil(#[from] MilError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{what} fingerprint mismatch: journal has {expected}, current is {found}")]
    FingerprintMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("study directory {path} is locked by process {pid}")]
    Locked { path: PathBuf, pid: u32 },
    #[error("study already exists at {0}; use resume")]
    StudyExists(PathBuf),
    #[error("study produced no values")]
    NoValues,
    #[error("failure rate exceeded: {failed} of {finished} trials failed (limit {limit})")]
    FailureRate { failed: usize, finished: usize, limit: f64 },
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("csv {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::CorruptJournal { .. } | Error::MissingHeader(_) | Error::Journal(_) => "journal",
            Error::Space(SpaceError::Invalid(_)) => "invalid_space",
            Error::Space(_) | Error::Sampler(_) => "space",
            Error::Pruner(_) => "pruner",
            Error::Mil(_) => "evaluator",
            Error::Query(_) => "query",
            Error::Config(e) => e.code(),
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::Locked { .. } => "locked",
            Error::StudyExists(_) => "study_exists",
            Error::NoValues => "no_values",
            Error::FailureRate { .. } => "failure_rate",
            Error::ZeroBudget => "invalid_budget",
            Error::Csv { .. } => "csv",
            Error::Json(_) => "serialization",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid score vector: {0}")]
    InvalidScores(String),

    #[error("cannot fuse an empty observation")]
    EmptyObservation,

    #[error("score vectors of an observation differ in length ({expected} vs {found})")]
    ScoreLengthMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("could not place {requested} objects without overlap after {attempts} attempts")]
    InfeasiblePlacement { requested: usize, attempts: usize },

    #[error("{path}: malformed JSON: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: schema error at {location}: {message}")]
    Schema {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: validation error at {location}: {message}")]
    Validation {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

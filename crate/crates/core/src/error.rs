use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("no records in {0}")]
    NoRecords(String),

    #[error("duplicate record for date {date} and region {region} (line {line})")]
    Conflict {
        date: String,
        region: String,
        line: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank-deficient design: frequencies {first} and {second} produce collinear columns (condition number {condition:.3e})")]
    RankDeficient {
        first: f64,
        second: f64,
        condition: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("ill-conditioned covariance: only {usable_rank} eigenvalue(s) above threshold, {requested} requested")]
    IllConditioned { usable_rank: usize, requested: usize },

    #[error("no candidate satisfies the threshold {threshold}: smallest ratio is {smallest:.6}; increase the threshold")]
    Infeasible { threshold: f64, smallest: f64 },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by the inputs' shape or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Singular(_)
                | Error::IllConditioned { .. }
                | Error::Degenerate(_)
                | Error::Numerical(_)
                | Error::Infeasible { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

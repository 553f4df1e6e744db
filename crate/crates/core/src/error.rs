use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown input format: {0}")]
    UnknownFormat(String),

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("duplicate ballot id `{0}`")]
    DuplicateBallot(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("closed form undefined for alpha = {alpha} with N = {n} (alpha >= N/2); use simulate_revelation or enumerate_exact")]
    ClosedFormUndefined { n: u64, alpha: u64 },

    #[error("enumeration budget exceeded: {outcomes} outcomes > {budget}")]
    BudgetExceeded { outcomes: f64, budget: u64 },

    #[error("threshold {threshold} not reached within N <= {bound}")]
    Unreachable { threshold: f64, bound: u64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown precinct `{0}`")]
    UnknownPrecinct(String),

    #[error("contest `{0}` not found")]
    UnknownContest(String),

    #[error("ballot style classifier required for dimension `{0}`")]
    MissingClassifier(String),

    #[error("total voters {total} is smaller than {distinct} distinct revealed ballots")]
    TotalTooSmall { total: usize, distinct: usize },

    #[error("contradictory plants for unit {unit} in contest {contest}")]
    ContradictoryPlant { unit: String, contest: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

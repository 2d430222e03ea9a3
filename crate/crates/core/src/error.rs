use std::path::PathBuf;

use thiserror::Error;

use crate::cost::CostKey;

/// Errors returned by the planning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid query {qid}: {reason}")]
    InvalidQuery { qid: u32, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}:{line}: {reason}")]
    TraceParse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("missing cost entry for {0}")]
    MissingEntry(CostKey),

    #[error("no feasible refinement plan: {0}")]
    NoFeasiblePlan(String),

    #[error("instance exceeds exhaustive-search guard ({registers} registers, {operators} operators; limit {max_registers}/{max_operators}); use greedy_map instead")]
    GuardExceeded {
        registers: usize,
        operators: usize,
        max_registers: usize,
        max_operators: usize,
    },

    #[error("infeasible assignment: {0}")]
    Infeasible(String),

    #[error("insufficient history: need at least {needed} windows, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("arithmetic overflow while computing {0}")]
    Overflow(&'static str),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("directed cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node sets differ")]
    NodeSetMismatch,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("enumeration limited to 4 nodes, got {0}")]
    TooLarge(usize),

    #[error("expected {expected} responses, found {found}")]
    ProtocolMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("no responses")]
    EmptyResponses,

    #[error("score ascent did not converge (gradient sup-norm {0:.3e})")]
    NonConvergence(f64),

    #[error("all expert weights are zero")]
    AllZeroWeights,

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("stage budget {budget} exceeds pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("stage budget must be positive")]
    ZeroBudget,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("instrument subset is empty")]
    EmptySubset,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("no instrument flagged valid")]
    NoValidInstruments,

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

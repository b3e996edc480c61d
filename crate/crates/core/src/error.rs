use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KarmaError {
    #[error("invalid urgency chain: {0}")]
    InvalidChain(String),

    #[error("invalid agent types: {0}")]
    InvalidTypes(String),

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("invalid social state at {path}: {reason}")]
    InvalidSocialState { path: String, reason: String },

    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),

    #[error("bid {bid} outside feasible range 0..={max}")]
    BidOutOfRange { bid: usize, max: usize },

    #[error("discount factor {0} is 1; use the average-reward solver")]
    AverageRewardRequired(f64),

    #[error("discount factor {0} is below 1; average-reward mode needs every type at 1")]
    DiscountedRequired(f64),

    #[error("population size {0} must be positive and even")]
    OddPopulation(usize),

    #[error("empty trace")]
    EmptyTrace,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    /// One entry per problem, each starting with its field path.
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    InvalidScenario(Vec<String>),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = KarmaError> = std::result::Result<T, E>;

impl From<std::io::Error> for KarmaError {
    fn from(e: std::io::Error) -> Self {
        KarmaError::Io(e.to_string())
    }
}

impl From<csv::Error> for KarmaError {
    fn from(e: csv::Error) -> Self {
        KarmaError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for KarmaError {
    fn from(e: serde_json::Error) -> Self {
        KarmaError::Io(e.to_string())
    }
}

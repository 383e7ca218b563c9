use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("vertex budget exceeded: {requested} vertices requested, budget is {budget}")]
    BudgetExceeded { requested: u128, budget: usize },

    #[error("vertex {0} is not valid here")]
    InvalidVertex(usize),

    #[error("edge {0} is not valid here")]
    InvalidEdge(usize),

    /// Some connected component of the kept vertex set has no killing.
    #[error("process is not transient: component containing vertex {vertex} has no killing")]
    NotTransient { vertex: usize },

    #[error("factorization failed at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("vertex set is empty")]
    EmptySet,

    #[error("objects were built on different graphs")]
    GraphMismatch,

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

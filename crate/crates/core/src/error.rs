use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("control {index} at horizon step {step} has zero probability")]
    ZeroProbability { step: usize, index: usize },

    #[error("degenerate estimate: every sampled cost has zero utility")]
    DegenerateUtility,

    #[error("non-finite trajectory cost in an expected-cost estimate")]
    NonFiniteCost,

    #[error("infeasible step at horizon step {step}: recovered covariance is not positive-definite")]
    InfeasibleStep { step: usize },

    #[error("no sample has cost at or below the threshold {threshold}")]
    EmptyEliteSet { threshold: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("episode failed at step {step}: {source}")]
    Episode {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

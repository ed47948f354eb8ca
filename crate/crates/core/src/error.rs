use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("population must contain at least one item")]
    InvalidPopulation,
    #[error("probability at index {index} is {value}, outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("subset member {index} is out of range for a population of {n}")]
    InvalidSubset { index: usize, n: usize },
    #[error("subset contains duplicate member {0}")]
    DuplicateMember(usize),
    #[error("empty subset tested in strict mode")]
    EmptyTest,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("divergence undefined: p[{index}] > 0 but advice is 0")]
    DivergenceUndefined { index: usize },
    #[error("advice is degenerate: {0}")]
    DegenerateAdvice(String),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),

    #[error("cannot split a node with fewer than two items")]
    CannotSplit,
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("insufficient data: {got} points for {k} components (need {need})")]
    InsufficientData { got: usize, k: usize, need: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("conditional variance is not positive in component {0}")]
    DegenerateConditional(usize),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("no data")]
    NoData,

    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's input contract (shapes, ranges, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty context")]
    EmptyContext,

    /// The remote predictor misbehaved: bad JSON, wrong row count, timeout, dead process.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("non-differentiable risk: {0}")]
    NonDifferentiableRisk(String),

    #[error("sensitivity unsupported by this backend")]
    SensitivityUnsupported,

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("boundary coalition handled by constraint (size {size} of {players})")]
    BoundaryCoalition { size: usize, players: usize },

    #[error("insufficient coalition diversity: columns {columns:?} are not identifiable")]
    InsufficientCoalitionDiversity { columns: Vec<usize> },

    #[error("underdetermined surrogate: {0}")]
    UnderdeterminedSurrogate(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {len} variables")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("causal matrix is not strictly lower triangular: entry ({row}, {col}) = {value}")]
    NotCanonical { row: usize, col: usize, value: f64 },

    #[error("observed causal matrix contains a directed cycle")]
    CyclicGraph,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("data is not centered: column-mean norm {0:e}")]
    NotCentered(f64),

    #[error("zero variance")]
    ZeroVariance,

    #[error("whitening failed: eigenvalue {index} is {value:e}, below floor {floor:e}")]
    RankDeficient {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("degenerate direction in power iteration (|u| = {0:e})")]
    DegenerateDirection(f64),

    #[error("ambiguous alignment: columns {0} and {1} are parallel")]
    AmbiguousAlignment(usize, usize),

    #[error("inconsistent interventional effects: cycle through variables {0:?}")]
    EffectCycle(Vec<usize>),

    #[error("dataset carries no intervention tag")]
    MissingIntervention,

    #[error("duplicate intervention on variable {0}")]
    DuplicateTarget(usize),

    #[error("intervention on variable {0} produced no self-column signal")]
    NoSelfSignal(usize),

    #[error("entry ({row}, {col}) = {value:e} of G above the diagonal exceeds tolerance {tol:e}")]
    TriangularViolation {
        row: usize,
        col: usize,
        value: f64,
        tol: f64,
    },

    #[error("solver fault: objective increased from {before:e} to {after:e}")]
    ObjectiveIncrease { before: f64, after: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("model generation failed after {0} attempts")]
    Generation(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

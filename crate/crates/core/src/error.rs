use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{table} row for {row} is not stochastic (sums to {sum})")]
    NonStochasticRow {
        table: &'static str,
        row: String,
        sum: f64,
    },

    #[error("{table} row for {row} has a negative or non-finite entry")]
    InvalidProbability { table: &'static str, row: String },

    #[error("negative or non-finite masking cost C({state}, {from} -> {to}) = {value}")]
    NegativeCost {
        state: String,
        from: String,
        to: String,
        value: f64,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),

    #[error("policy assigns zero probability to action {action} at augmented state {state}")]
    DegeneratePolicy { state: usize, action: usize },

    #[error("observation sequence has zero probability under the current policy")]
    ZeroProbabilityObservation,

    #[error("exact enumeration needs {count:.3e} sequences, above the cap of {cap}")]
    EnumerationTooLarge { count: f64, cap: u64 },

    #[error("policy parameters diverged at iteration {iteration} (max |theta| = {max_abs})")]
    DivergedParameters { iteration: usize, max_abs: f64 },

    #[error("robot policy undefined for reachable cell {cell}")]
    InvalidPolicyRow { cell: usize },

    #[error("secret state {state} is covered by more than one sensor")]
    AmbiguousSecretCoverage { state: String },

    #[error("invalid gridworld configuration: {0}")]
    InvalidGridworld(String),

    #[error("scenario error in {section}: {message}")]
    Scenario { section: String, message: String },

    #[error("policy file error: {0}")]
    PolicyFormat(String),

    #[error("policy does not match model: {0}")]
    PolicyShape(String),

    #[error("trace file error: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

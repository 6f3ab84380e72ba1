use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("invalid state {state}: {reason}")]
    InvalidState { state: String, reason: String },
    #[error("space has {states} states, above the enumeration cap of {cap}")]
    TooLarge { states: u128, cap: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("explicit edge references invalid state: {0}")]
    InvalidEdge(String),
    #[error("empty support")]
    EmptySupport,
    #[error("neighborhood graph is disconnected on the support")]
    Disconnected,
    #[error("mass ratio {value} at state {state} is not positive and finite")]
    NonPositiveRatio { state: String, value: f64 },
    #[error("probability mass is zero at state {0}")]
    ZeroMass(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("model cannot be normalized: {0}")]
    NotNormalizable(String),
    #[error("non-finite {what} at iteration {iteration}")]
    Diverged { what: &'static str, iteration: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn fmt_state(x: &[usize]) -> String {
    use core::fmt::Write;
    let mut s = String::from("(");
    for (i, v) in x.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s.push(')');
    s
}

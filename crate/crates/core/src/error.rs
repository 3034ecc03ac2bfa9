use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incompatible data: {0}")]
    Compatibility(String),

    /// The minimizer ran out of iterations. The last iterate is kept so
    /// callers can inspect or restart from it.
    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    /// A non-converged implicit step inside a trajectory.
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sign violation: extremal takes value {min_value:.3e} after normalization")]
    SignViolation { min_value: f64 },

    #[error("out of range: {0}")]
    Range(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("config line {line}: key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that come from an iterative solve running out of budget.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } => true,
            Error::Step { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}

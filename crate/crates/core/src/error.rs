use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised while parsing or evaluating payoff and demand expressions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("expression produced a non-finite value")]
    NonFiniteResult,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("path tree needs {steps} steps, above the cap of {cap}")]
    StepCapExceeded { steps: usize, cap: usize },
    #[error("demand for interval {interval} depends on b, which a recombining node at this step does not determine")]
    NonMarkovDemandOnRecombiningLattice { interval: usize },
    #[error("log-weight range {range:.1} exceeds the budget {budget:.1} at step {step}; rescale gamma, demand or payoff")]
    OverflowGuard { range: f64, budget: f64, step: usize },
    #[error("{what} = {value} exceeds its bound {bound}")]
    OutOfBound { what: String, value: f64, bound: f64 },
    #[error("inconsistent surface: {0}")]
    InconsistentSurface(String),
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// Stable machine-readable name used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Expr(ExprError::Syntax { .. }) => "SyntaxError",
            Error::Expr(ExprError::UnknownIdentifier { .. }) => "UnknownIdentifier",
            Error::Expr(ExprError::DivisionByZero) => "DivisionByZero",
            Error::Expr(ExprError::NonFiniteResult) => "NonFiniteResult",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::StepCapExceeded { .. } => "StepCapExceeded",
            Error::NonMarkovDemandOnRecombiningLattice { .. } => {
                "NonMarkovDemandOnRecombiningLattice"
            }
            Error::OverflowGuard { .. } => "OverflowGuard",
            Error::OutOfBound { .. } => "OutOfBound",
            Error::InconsistentSurface(_) => "InconsistentSurface",
            Error::InconsistentInputs(_) => "InconsistentInputs",
            Error::TimeOutOfRange { .. } => "TimeOutOfRange",
            Error::InvalidParameter(_) => "InvalidParameter",
        }
    }
}

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("solver did not converge: {message} (last residual {residual:.3e})")]
    Solver { message: String, residual: f64 },
    #[error("degenerate system: {0}")]
    Degenerate(String),
    #[error("not applicable: {0}")]
    Inapplicable(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("degenerate fit: {0}")]
    FitDegenerate(String),
    #[error("degenerate field: {0}")]
    DegenerateField(String),
    #[error("barrier inequality violated at {violations} of {checked} points (worst {worst:.3e})")]
    Barrier {
        violations: usize,
        checked: usize,
        worst: f64,
        indices: Vec<usize>,
    },
}

impl Error {
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>, residual: f64) -> Self {
        Error::Solver {
            message: msg.into(),
            residual,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate constraints at node {node}: band width {width:e} below minimum {min_width:e}")]
    DegenerateConstraints { node: usize, width: f64, min_width: f64 },

    #[error("infeasible terminal: l(T,a) = {lower:e}, r(T,a) = {upper:e} (tolerance {tol:e})")]
    InfeasibleTerminal { lower: f64, upper: f64, tol: f64 },

    #[error("Picard iteration did not converge after {iterations} iterations (last distance {last_distance:e})")]
    NonConvergence {
        iterations: usize,
        last_distance: f64,
        distances: Vec<f64>,
    },
}

impl Error {
    /// Stable machine-readable tag, used by the CLI for exit reporting.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::DegenerateConstraints { .. } => "degenerate-constraints",
            Error::InfeasibleTerminal { .. } => "infeasible-terminal",
            Error::NonConvergence { .. } => "non-convergence",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

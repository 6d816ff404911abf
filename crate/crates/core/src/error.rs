//! Error type shared by all modules.

/// Failure modes surfaced to callers.
///
/// `InvalidInput` covers precondition violations (bad exponents, negative
/// radii, empty samples, degenerate domains). `BudgetExceeded` is kept
/// separate so drivers can map it to a distinct exit status.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on the arguments was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested construction would exceed the cell budget.
    #[error("cell budget exceeded: need {needed} cells, budget {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    /// An iterative solver failed to reach its tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// The operation is not defined for this configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

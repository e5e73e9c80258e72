use thiserror::Error;

/// Errors raised by model construction, simulation and the strategy builders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time grid must have maturity > 0 and at least one step")]
    EmptyGrid,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("anniversary t={time} does not fall on a grid node")]
    OffGridAnniversary { time: f64 },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("no sign change of the budget residual on [{lo}, {hi}] (residuals {f_lo}, {f_hi})")]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("zero bond price budget: D(0) = {0} >= 1")]
    NoOptionBudget(f64),

    /// The claim only admits the trivial solution Y = Z = 0.
    #[error("only the zero solution exists ({reason}); refusing to build a portfolio with Y(0) = {initial} > 0")]
    ZeroSolutionOnly { reason: String, initial: f64 },

    #[error("no solution exists: {0}")]
    NoSolution(String),

    #[error("negative surplus {surplus:e} at node {node} (path {path})")]
    NegativeSurplus {
        surplus: f64,
        node: usize,
        path: usize,
    },

    #[error("drawdown construction infeasible: {0}")]
    Infeasible(String),

    #[error("bond volatility {value} exceeds cap {cap} at node {node}")]
    UnboundedVolatility { value: f64, cap: f64, node: usize },

    #[error("tree depth {depth} outside [1, {cap}]")]
    TreeDepth { depth: usize, cap: usize },

    #[error("Picard iteration did not converge after {iterations} iterations (last delta {last_delta:e}, contraction ratio {ratio})")]
    NonConvergence {
        iterations: usize,
        last_delta: f64,
        ratio: f64,
        deltas: Vec<f64>,
    },

    #[error("Monte-Carlo budget exceeded: {needed} path steps > {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what}: product did not converge within {max_terms} terms (tail bound {tail_bound:e} > tol {tol:e})")]
    NonConvergent {
        what: &'static str,
        max_terms: usize,
        tail_bound: f64,
        tol: f64,
    },

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error(
        "quadrature exceeded {limit} subdivisions on [{a}, {b}] (error estimate {err_estimate:e})"
    )]
    MaxSubdivisionsExceeded {
        limit: usize,
        a: f64,
        b: f64,
        err_estimate: f64,
    },

    #[error("integrand returned non-finite value {value} at {at}")]
    NonFinite { at: f64, value: f64 },

    #[error("target {target} outside bracket image [{lo}, {hi}]")]
    BracketInvalid { target: f64, lo: f64, hi: f64 },

    #[error("window ({a}, {b}] not covered by path horizon {horizon}")]
    WindowOutOfRange { a: u64, b: u64, horizon: u64 },

    #[error("step budget exceeded: {requested:e} transitions requested, cap is {cap:e}")]
    BudgetExceeded { requested: f64, cap: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("transition table entry at x = {x}, u = {u}: {source}")]
    TableEntry {
        x: f64,
        u: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{op}: {source}")]
    Context {
        op: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with the name of the operation that failed.
    pub fn context(self, op: &'static str) -> Self {
        Error::Context {
            op,
            source: Box::new(self),
        }
    }
}

use thiserror::Error;

/// Errors produced by grid construction, solves, geometry and experiments.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite sample value {value} at node {node:?}")]
    Sampling { node: [usize; 3], value: f64 },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("degenerate set: {0}")]
    DegenerateSet(String),

    #[error("solver did not converge after {sweeps} sweeps (residual {residual:.3e}, tol {tol:.3e})")]
    NonConvergence {
        sweeps: usize,
        residual: f64,
        tol: f64,
    },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("ellipticity violated at node {node:?}: -lap(phi0) = {value:.6e} outside [{lo:.6e}, {hi:.6e}]")]
    Ellipticity {
        node: [usize; 3],
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("rate fit error: {0}")]
    RateFit(String),

    #[error("invariant violated: {what} (lhs {lhs:.6e}, rhs {rhs:.6e})")]
    InvariantViolation { what: String, lhs: f64, rhs: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

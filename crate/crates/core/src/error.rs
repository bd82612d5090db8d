use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("infeasible transport plan: {0}")]
    InfeasiblePlan(String),

    #[error("domain mismatch: [{lo_a}, {hi_a}] vs [{lo_b}, {hi_b}]")]
    DomainMismatch {
        lo_a: f64,
        hi_a: f64,
        lo_b: f64,
        hi_b: f64,
    },

    #[error("family size mismatch: expected {expected}, got {got}")]
    FamilyMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("time {0} outside [0, 1]")]
    InvalidTime(f64),

    #[error("value {value} at node {node} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        node: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("grid too coarse: order {order} needs at least {needed} nodes, got {got}")]
    GridTooCoarse {
        order: usize,
        needed: usize,
        got: usize,
    },

    #[error("unknown cost descriptor `{0}`")]
    UnknownDescriptor(String),

    #[error("cost is not normalized: sum of exp(-c) * vol = {0}")]
    UnnormalizedCost(f64),

    #[error("signed measure is not balanced: total mass {0}")]
    Unbalanced(f64),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("path probe failed at t = {t}: {source}")]
    ProbeFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("pinned linear system is singular; smallest singular values {0:?}")]
    Singular(Vec<f64>),

    #[error("time step {dt:e} violates the stability bound; use dt <= {proposed:e}")]
    Cfl { dt: f64, proposed: f64 },

    #[error("positivity lost in species {species}: weight {weight:e} at cell {cell}")]
    Positivity {
        species: usize,
        cell: usize,
        weight: f64,
    },

    #[error("invalid flow spec: {0}")]
    InvalidFlowSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

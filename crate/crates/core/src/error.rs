use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid mesh specification: {0}")]
    InvalidMesh(String),

    #[error("functions live on different meshes")]
    MeshMismatch,

    #[error("quadrature field layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("no boundary facets carry the tag {0}")]
    EmptyTagSet(&'static str),

    #[error("non-finite modular value at scaling {0}")]
    NonFiniteModular(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("interval endpoints out of order at ({x}, {y}), s = {s}: lower {lower} > upper {upper}")]
    EndpointOrder {
        x: f64,
        y: f64,
        s: f64,
        lower: f64,
        upper: f64,
    },

    #[error("function is infeasible for the constraint set at node {node} (violation {violation:e})")]
    Infeasible { node: usize, violation: f64 },

    #[error("singular Newton system (smoothing raised to {epsilon:e})")]
    SingularSystem { epsilon: f64 },

    #[error("no feasible sample found at radius {0}")]
    NoFeasibleSample(f64),

    #[error("one-sided growth bound violated at ({x}, {y}), s = {s}: {detail}")]
    BoundViolation { x: f64, y: f64, s: f64, detail: String },

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("enclosure violated at node {node}: value {value}, interval [{lower}, {upper}]")]
    EnclosureViolated {
        node: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("iterates not monotone at iteration {iteration}, node {node} (excess {excess:e})")]
    NotMonotone {
        iteration: usize,
        node: usize,
        excess: f64,
    },

    #[error("lattice condition fails: {0}")]
    Lattice(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

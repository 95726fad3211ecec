use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameter: {0}")]
    InvalidMesh(String),

    #[error("fine mesh with {n} subdivisions exceeds the configured cap of {cap}")]
    ResourceLimit { n: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("mesh mismatch: vector tagged for n={found}, operator expects n={expected}")]
    MeshMismatch { expected: usize, found: usize },

    #[error("coefficient sample {value} at element {element} is not positive")]
    NonPositiveCoefficient { element: usize, value: f64 },

    #[error("incompatible load: |sum b| = {sum:e} exceeds {bound:e}")]
    IncompatibleLoad { sum: f64, bound: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("constraint violation {violation:e} after corrector solve (anchor {anchor}, node {node})")]
    ConstraintViolation { anchor: usize, node: usize, violation: f64 },

    #[error("corrector problem (anchor {anchor}, node {node}) failed: {source}")]
    Corrector {
        anchor: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference field has zero norm")]
    ZeroReference,

    #[error("lifting basis needs at least one refinement level between coarse and fine meshes")]
    LiftingUnavailable,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

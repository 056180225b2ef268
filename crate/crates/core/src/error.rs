use thiserror::Error;

/// Errors raised by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("point with norm {norm} lies outside the domain ball of radius {radius}")]
    OutOfDomain { norm: f64, radius: f64 },

    #[error("point lies on a bent hyperplane (|pre-activation| = {value:e} at layer {layer}, neuron {neuron})")]
    OnBoundary { layer: usize, neuron: usize, value: f64 },

    #[error("rejection budget exceeded: {accepted} accepted, {rejected} rejected")]
    RejectionBudgetExceeded { accepted: usize, rejected: usize },

    #[error("degenerate hyperplane pair: normals are colinear")]
    DegeneratePair,

    #[error("duplicate probe points {0} and {1}")]
    DuplicateProbe(usize, usize),

    #[error("patch supports {0} and {1} overlap or leave the domain; closed form unavailable")]
    OverlappingSupports(usize, usize),

    #[error("singular normal-equations system (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("gradient descent diverged at iteration {iteration}: objective {objective:e} with step {step:e}")]
    Divergence { iteration: usize, objective: f64, step: f64 },

    #[error("radius selection did not reach diagonal dominance after {0} shrink steps")]
    RadiusSelection(usize),

    #[error("point is not within tolerance of both zero sets (distances {0:e}, {1:e})")]
    NotOnBoundaries(f64, f64),

    #[error("zero-set tracing failed: {0}")]
    Tracing(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V, E = Error> = std::result::Result<V, E>;

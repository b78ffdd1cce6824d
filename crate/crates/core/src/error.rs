use thiserror::Error;

use crate::geometry::BoundaryTag;

/// Errors raised anywhere in the homogenization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cell geometry: {0}")]
    InvalidGeometry(String),

    #[error("mesh size h={h} too coarse: only {elements:.2} elements across the ligament (need >= 3)")]
    MeshTooCoarse { h: f64, elements: f64 },

    #[error("invalid mesh parameter: {0}")]
    InvalidMeshParameter(String),

    #[error("estimated element count {estimated} exceeds the configured cap {cap}")]
    MeshTooLarge { estimated: usize, cap: usize },

    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),

    #[error("inconsistent boundary conditions on {tag:?}: {reason}")]
    InconsistentBoundary { tag: BoundaryTag, reason: String },

    #[error("singular saddle-point system: {0}")]
    SingularSystem(String),

    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("incompatible cell problem: {0}")]
    IncompatibleCellProblem(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("effective tensor rejected: {0}")]
    InvalidTensor(String),

    #[error("left-hand matrix is not positive definite (Brinkman sign {sign:+}, dt*|dO|*b = {product:.3e})")]
    IndefiniteOperator { sign: i8, product: f64 },

    #[error("noise operator rejected: {0}")]
    DivergentNoise(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("uncoupled noise: {0}")]
    UncoupledNoise(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

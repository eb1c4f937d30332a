//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, training, sampling and IO.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector had the wrong length for the operation.
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A model definition violated its structural invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A configuration value was out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Conjugate gradients hit a zero-curvature direction; the system is
    /// singular (or indefinite) on the relevant subspace.
    #[error("singular system: conjugate gradients broke down")]
    SingularSystem,

    /// The constraint Jacobian is rank deficient at the query point.
    #[error("rank-deficient constraint Jacobian at the current point")]
    RankDeficient,

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A gradient vector contained NaN or infinite entries.
    #[error("non-finite gradient entries")]
    NonFiniteGradient,

    /// A leapfrog step could not be brought back onto the constraint set.
    #[error("constraint residual {residual:.3e} exceeds tolerance after step")]
    ConstraintNotMet { residual: f64 },

    /// Projection onto the zero set did not reach the success threshold.
    #[error("projection failed: residual {residual:.3e}")]
    ProjectionFailed { residual: f64 },

    /// A density query was made at a point off the model manifold.
    #[error("off-manifold query: residual {residual:.3e}")]
    OffManifold { residual: f64 },

    /// Density evaluation requires a normalizing-constant estimate.
    #[error("missing log-normalizer: run normalization first")]
    MissingLogZ,

    /// An operation was given an empty batch or dataset.
    #[error("empty batch or dataset")]
    EmptyData,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

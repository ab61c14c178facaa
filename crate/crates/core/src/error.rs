//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by simulation, inversion, training, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// The explicit integrator produced a non-finite value.
    #[error("simulation diverged at step {step}: {detail}")]
    SimulationDiverged { step: usize, detail: String },

    /// Min-max normalization of an all-equal sequence is undefined.
    #[error("degenerate normalization: sequence is constant ({value})")]
    DegenerateNormalization { value: f64 },

    /// Array shapes do not line up for the requested operation.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A linear solve failed (singular or not positive definite).
    #[error("solver failure (lambda={lambda}): {detail}")]
    SolverFailure { lambda: f64, detail: String },

    /// A precondition on an argument was violated.
    #[error("invalid argument for {context}: {detail}")]
    InvalidArgument {
        context: &'static str,
        detail: String,
    },

    /// A forward/backward pass produced a non-finite value.
    #[error("non-finite value in {node}: {detail}")]
    NonFinite { node: String, detail: String },

    /// The learning-rate sweep diverged at every trial.
    #[error("learning-rate range test diverged for all trials; retry with a smaller lr_max than {lr_max}")]
    LrSweepDiverged { lr_max: f64 },

    /// A required input artifact does not exist.
    #[error("missing artifact: {path} ({hint})")]
    MissingArtifact { path: String, hint: String },

    /// A persisted file failed structural validation.
    #[error("malformed file {path} (line {line}): {detail}")]
    MalformedFile {
        path: String,
        line: usize,
        detail: String,
    },

    /// A checkpoint was loaded against the wrong companion artifact.
    #[error("checkpoint mismatch: {detail}")]
    CheckpointMismatch { detail: String },

    /// Configuration text failed to parse or contained unknown keys.
    #[error("config error (line {line}): {detail}")]
    Config { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

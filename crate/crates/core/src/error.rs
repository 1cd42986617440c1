use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical kernels, the networks and the benchmark.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected:?}, got {got:?}")]
    Dimension {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("no convergence after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    Convergence { sweeps: usize, off_norm: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("rank deficient input: pivot {pivot:e} at column {column}")]
    Rank { column: usize, pivot: f64 },

    #[error("point is off the Stiefel manifold: |Θ^TΘ - I|_F = {residual:e}")]
    NotOnManifold { residual: f64 },

    #[error("matrix is not a tangent vector: |Θ^TZ + Z^TΘ|_F = {residual:e}")]
    NotTangent { residual: f64 },

    #[error("tangent vectors live at different base points")]
    BasePoint,

    #[error("parameter slot kind mismatch: expected {expected}, found {found}")]
    Kind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("activation tape does not match the network: {0}")]
    Tape(String),

    #[error("invalid labels y_h={y_h}, y_c={y_c}: must be complementary values in {{0, 1}}")]
    Label { y_h: u8, y_c: u8 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index {index} not present in the {set} set")]
    Index { index: usize, set: &'static str },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}; last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<none>".into()))]
    TrainingDiverged { epoch: usize, last_good: Option<PathBuf> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

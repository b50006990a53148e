//! Error type shared by every module in the crate.

use thiserror::Error;

/// Anything that can go wrong while building operators, sampling noise,
/// stepping trajectories, or fitting convergence orders.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid with {n} interior points cannot hold {m} modes; need n >= m")]
    GridTooCoarse { n: usize, m: usize },

    #[error("semigroup time must be nonnegative, got {t}")]
    NegativeTime { t: f64 },

    #[error("mode-count mismatch: {left} vs {right}")]
    ModeMismatch { left: usize, right: usize },

    #[error("cannot project a field with {m} modes onto {target} modes; target must not exceed m")]
    ProjectUp { m: usize, target: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("step size must be positive, got {dt}")]
    NonPositiveStep { dt: f64 },

    #[error("covariance eigenvalue for mode {k} must be nonnegative, got {alpha}")]
    NegativeCovariance { k: usize, alpha: f64 },

    #[error("mode index {k} outside covariance range (m_max = {m_max})")]
    ModeOutOfRange { k: usize, m_max: usize },

    #[error("unknown model id '{0}'")]
    UnknownModel(String),

    #[error("unknown scalar function '{0}'")]
    UnknownScalarFn(String),

    #[error("averaging window {window} shorter than 20 micro steps of {micro_dt}")]
    WindowTooShort { window: f64, micro_dt: f64 },

    #[error("model '{0}' has no closed-form averaged drift (linear-Gaussian family required)")]
    NoClosedForm(String),

    #[error("averaged-drift table is empty")]
    EmptyTable,

    #[error(
        "fast substep count {0} exceeds the 10^7 cap; increase eps, kappa, or shrink macro_dt"
    )]
    SubstepCap(usize),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("order fit needs at least 3 grid points, got {0}")]
    TooFewPoints(usize),

    #[error("order fit needs positive errors and eps; point {index} has value {value}")]
    NonPositiveFitPoint { index: usize, value: f64 },

    #[error("degenerate study: {0}")]
    DegenerateStudy(String),

    #[error(
        "time-discretization bias {bias:.3e} is not below 10% of the reference averaging \
         error {reference:.3e}; try macro_dt <= {suggested:.3e}"
    )]
    BiasGuard {
        bias: f64,
        reference: f64,
        suggested: f64,
    },

    #[error("assumption checks failed: {0}")]
    AssumptionsFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

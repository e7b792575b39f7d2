use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum PamError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular site {site:?}: operator applied to a -inf entry")]
    SingularSite { site: Vec<i64> },

    #[error("empty domain: every site is -inf")]
    EmptyDomain,

    #[error("field/box size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("snapshot parse error: {0}")]
    SnapshotParse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cumulant generating function diverges at t = {t}")]
    Divergence { t: f64 },

    #[error("no bracketing root in [{lo}, {hi}] for {what}")]
    NoBracket { what: &'static str, lo: f64, hi: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64, history: Vec<f64> },

    #[error("stability violation at step {step}: dt = {dt} exceeds bound {bound}")]
    Stability { step: usize, dt: f64, bound: f64 },

    #[error("non-finite value at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },

    #[error("window of radius {radius} exceeds the field's box")]
    WindowOutOfBox { radius: f64 },

    #[error("box too small: {0}")]
    BoxTooSmall(String),

    #[error("grid too coarse: boundary mass {boundary_mass:e} exceeds {limit:e}")]
    GridTooCoarse { boundary_mass: f64, limit: f64 },

    #[error("inconsistent scaling pair: gamma = {gamma}, eta_* = {eta_star}")]
    InconsistentScaling { gamma: f64, eta_star: f64 },

    #[error("methods disagree: resolvent = {resolvent}, box = {boxed}")]
    MethodDisagreement { resolvent: f64, boxed: f64 },

    #[error("parameters outside the weakly catalytic regime (p*gamma/rho = {ratio}, r_d = {threshold}); lambda_p^* > 0")]
    Regime { ratio: f64, threshold: f64 },

    #[error("table does not cover {0}")]
    MissingData(String),

    #[error("w-equation step rejected at every Krylov size near t = {t} (bundle seed {seed})")]
    StepRejection { seed: u64, t: f64 },

    #[error("descent failed: {0}")]
    Descent(String),
}

pub type Result<T> = std::result::Result<T, PamError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> PamError {
    PamError::InvalidParameter { name, reason: reason.into() }
}

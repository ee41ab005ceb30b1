use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("closure is not 1-periodic in q (mismatch {mismatch:.3e} at p = {p})")]
    NonPeriodic { p: f64, mismatch: f64 },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("shifted momentum {p} leaves the momentum grid [{p_min}, {p_max}]")]
    RangeExceeded { p: f64, p_min: f64, p_max: f64 },

    #[error("implicit midpoint Newton iteration failed to converge at t = {t} (residual {residual:.3e})")]
    NewtonDivergence { t: f64, residual: f64 },

    #[error("momentum {p} left the grid [{p_min}, {p_max}] at t = {t}")]
    OutOfDomain { t: f64, p: f64, p_min: f64, p_max: f64 },

    #[error("step too large: tau * sup|d2H/dQdp| = {product:.3} must stay below 0.5")]
    StepTooLarge { product: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("distinguished class not found in degree {degree}: {essential} essential classes")]
    ClassNotFound { degree: usize, essential: usize },

    #[error("field '{0}' is not convex in p")]
    NotConvex(String),

    #[error("Lax-Oleinik minimizer hit the velocity window boundary at node {node} (window {window})")]
    WindowTooSmall { node: usize, window: usize },

    #[error("field '{0}' is not of mechanical form 1/2 p^2 - V(q)")]
    NotMechanical(String),

    #[error("backend {backend} cannot process this input: {reason}")]
    BackendInvalid { backend: String, reason: String },

    #[error("resolution budget exceeded: {0}")]
    ResolutionBudget(String),

    #[error("fiber reduction failed: {0}")]
    NotCoercive(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("slice (q = {q}, p = {p}): {source}")]
    Slice {
        q: f64,
        p: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("not 1-periodic: {0}")]
    NonPeriodic(String),

    #[error("metric not positive definite at q = {q:?} (smallest eigenvalue {eigenvalue:e})")]
    MetricNotPositive { q: Vec<f64>, eigenvalue: f64 },

    #[error("Q1 violated at (t, q, v) = ({t}, {q:?}, {v:?}): smallest eigenvalue of d_vv is {eigenvalue:e}")]
    Q1Violation { t: f64, q: Vec<f64>, v: Vec<f64>, eigenvalue: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("blow-up guard exceeded at t = {t} (|v| = {speed:e})")]
    BlowUp { t: f64, speed: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("node spacing violated between nodes {index} and {next}: distance {distance} >= rho0 = {bound}{}", required_k.map(|k| format!("; try k >= {k}")).unwrap_or_default())]
    Spacing { index: usize, next: usize, distance: f64, bound: f64, required_k: Option<usize> },

    #[error("segment outside uniqueness radii: {0}")]
    OutsideRadii(String),

    #[error("segment solver failed: {0}")]
    SegmentFailed(String),

    #[error("uniqueness radii: {0}")]
    Radii(String),

    #[error("symplectic drift {drift:e} at t = {t}; reduce the step size")]
    SymplecticDrift { t: f64, drift: f64 },

    #[error("crossing cluster unresolved near t = {t}; refine the path sampling")]
    CrossingCluster { t: f64 },

    #[error("index mismatch: symplectic path gives ({cz_iota}, {cz_nu}), Hessian inertia gives ({morse}, {nullity}); refine the path sampling or increase k")]
    IndexMismatch { cz_iota: i64, cz_nu: usize, morse: usize, nullity: usize },

    #[error("iteration inequality violated at n = {n}: {detail}")]
    Inequality { n: usize, detail: String },

    #[error("modification radius {radius} rejected: {reason}; smallest admissible radius found is {min_admissible:?}")]
    Modification { radius: f64, reason: String, min_admissible: Option<f64> },

    #[error("Bangert construction: {0}")]
    Bangert(String),

    #[error("a priori rail violated: orbit with action {action} reaches speed {speed} against R = {radius}; double R")]
    Rail { action: f64, speed: f64, radius: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Failures raised by the geometry and certification routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    #[error("point {value} lies outside the domain {domain}")]
    Domain { value: f64, domain: String },
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("metric is singular or not positive definite at {0:?}")]
    Singular(Vec<f64>),
    #[error("point {point:?} is closer than {margin} to the domain boundary")]
    Margin { point: Vec<f64>, margin: f64 },
    #[error("plane vectors are linearly dependent")]
    DegeneratePlane,
    #[error("function must be positive, got {value} at t = {t}")]
    Positivity { t: f64, value: f64 },
    #[error("plane class not available: {0}")]
    PlaneClass(String),
    #[error("wrong shape: {0}")]
    WrongShape(String),
    #[error("direction undefined: {0}")]
    UndefinedDirection(String),
    #[error("ill-conditioned eigenspace projector: {0}")]
    IllConditioned(String),
    #[error("non-finite value at t = {0}")]
    NonFinite(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;

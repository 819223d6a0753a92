use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Variant names double as the stable error names printed by the command
/// line front end, see [`Error::name`].
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("conformal factor is not positive ({0})")]
    NonPositiveFactor(String),
    #[error("total area diverges: {0}")]
    DivergentArea(String),
    #[error("numerical differentiation failed: {0}")]
    NumericalDifferentiationFailure(String),
    #[error("tail integral diverges: {0}")]
    DivergentTail(String),
    #[error("triangulation failed: {0}")]
    TriangulationFailure(String),
    #[error("curve is not simple: edges {0} and {1} intersect")]
    SelfIntersection(usize, usize),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("argument outside the admissible domain: {0}")]
    DomainError(String),
    #[error("radius scan exhausted below {0:e}")]
    ScanExhausted(f64),
    #[error("flow stalled after {steps} steps (curvature energy {energy})")]
    Stalled { steps: usize, energy: f64 },
    #[error("curve collapsed after {steps} steps")]
    Collapsed { steps: usize },
    #[error("{0} pinch points found within tolerance")]
    AmbiguousPinch(usize),
    #[error("all {0} starts ended stalled or collapsed")]
    AllStartsFailed(usize),
    #[error("time step unstable at t = {0}")]
    StepUnstable(f64),
    #[error("time {t} is at or past the extinction estimate {extinction}")]
    ExtinctPastT { t: f64, extinction: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable identifier used in command line diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveFactor(_) => "NonPositiveFactor",
            Error::DivergentArea(_) => "DivergentArea",
            Error::NumericalDifferentiationFailure(_) => "NumericalDifferentiationFailure",
            Error::DivergentTail(_) => "DivergentTail",
            Error::TriangulationFailure(_) => "TriangulationFailure",
            Error::SelfIntersection(..) => "SelfIntersection",
            Error::InvalidCurve(_) => "InvalidCurve",
            Error::DomainError(_) => "DomainError",
            Error::ScanExhausted(_) => "ScanExhausted",
            Error::Stalled { .. } => "Stalled",
            Error::Collapsed { .. } => "Collapsed",
            Error::AmbiguousPinch(_) => "AmbiguousPinch",
            Error::AllStartsFailed(_) => "AllStartsFailed",
            Error::StepUnstable(_) => "StepUnstable",
            Error::ExtinctPastT { .. } => "ExtinctPastT",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

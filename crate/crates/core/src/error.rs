use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports. Variant names double as the error
/// names written into run manifests.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expected shape integral {integral} deviates from 1 by more than {tolerance}")]
    Normalization { integral: f64, tolerance: f64 },
    #[error("invalid shape family: {0}")]
    InvalidFamily(String),
    #[error("duplicate observation site {0}")]
    DuplicateSite(f64),
    #[error("observation value {value} at site {site} is not strictly positive")]
    NonPositiveValue { site: f64, value: f64 },
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("invalid count {0}: must be at least 1")]
    InvalidCount(usize),
    #[error("simulation window [{a}, {b}] does not cover [{need_a}, {need_b}]")]
    WindowTooSmall { a: f64, b: f64, need_a: f64, need_b: f64 },
    #[error("shape family has a zero sup bound; nothing can be simulated")]
    DegenerateFamily,
    #[error("empty sample")]
    EmptySample,
    #[error("curves {i} and {j} are tangent at x = {x}; intersection weight undefined")]
    Tangency { i: usize, j: usize, x: f64 },
    #[error("curves {i} and {j} coincide on an interval near x = {x}")]
    IntervalIntersection { i: usize, j: usize, x: f64 },
    #[error("forced blocks {a:?} and {b:?} overlap without a common superset block")]
    Conflict { a: Vec<usize>, b: Vec<usize> },
    #[error("no feasible scenario: {0}")]
    Infeasible(String),
    #[error("{free} free observation indices exceed the enumeration cap {cap}")]
    TooManyFreeIndices { free: usize, cap: usize },
    #[error("block {0:?} has zero weight but was selected for sampling")]
    EmptyRegion(Vec<usize>),
    #[error("site {0} is not on the lattice")]
    OffLattice(f64),
    #[error("rejection acceptance rate {rate:e} below {min:e}")]
    AcceptanceTooLow { rate: f64, min: f64 },
    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable short name, used in manifests and the C API.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Normalization { .. } => "NormalizationError",
            Error::InvalidFamily(_) => "InvalidFamily",
            Error::DuplicateSite(_) => "DuplicateSiteError",
            Error::NonPositiveValue { .. } => "NonPositiveValueError",
            Error::InvalidObservations(_) => "InvalidObservations",
            Error::InvalidCount(_) => "InvalidCount",
            Error::WindowTooSmall { .. } => "WindowTooSmall",
            Error::DegenerateFamily => "DegenerateFamily",
            Error::EmptySample => "EmptySample",
            Error::Tangency { .. } => "TangencyError",
            Error::IntervalIntersection { .. } => "IntervalIntersection",
            Error::Conflict { .. } => "ConflictError",
            Error::Infeasible(_) => "InfeasibleError",
            Error::TooManyFreeIndices { .. } => "TooManyFreeIndices",
            Error::EmptyRegion(_) => "EmptyRegionError",
            Error::OffLattice(_) => "OffLatticeError",
            Error::AcceptanceTooLow { .. } => "AcceptanceTooLow",
            Error::SingularCovariance => "SingularCovarianceError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Config { .. } => "ConfigError",
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
        Error::Io(e.to_string())
    }
}

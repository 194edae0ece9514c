use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The CLI maps each variant onto an exit code through [`Error::exit_code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("weight {weight} at atom {index} is not strictly positive")]
    NonPositiveWeight { index: usize, weight: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("weights sum to {sum}, which is not within 1e-9 of 1")]
    WeightSumOutOfRange { sum: f64 },

    #[error("scenario set must contain at least one atom")]
    EmptyScenarioSet,

    #[error("atom {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("random variable of length {found} is not aligned with a scenario set of {expected} atoms")]
    Misalignment { expected: usize, found: usize },

    #[error("invalid risk specification: {0}")]
    InvalidRisk(String),

    #[error("box envelope is infeasible: mean-1 requires {lower} <= 1 <= {upper}")]
    InfeasibleEnvelope { lower: f64, upper: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("Slater condition not verified (best strict margin {margin:e})")]
    SlaterNotVerified { margin: f64 },

    #[error("utility is not certifiably concave: {0}")]
    NonconcaveUtility(String),

    #[error("policy row for scenario {scenario} is not admissible")]
    InadmissiblePolicy { scenario: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("multiplier {index} is negative ({value})")]
    NegativeMultiplier { index: usize, value: f64 },

    #[error("policy grid has {combinations} combinations, above the enumeration limit {limit}")]
    GridTooLarge { combinations: f64, limit: f64 },

    #[error("dual trace is empty")]
    EmptyTrace,

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonPositiveWeight { .. }
            | Error::LengthMismatch { .. }
            | Error::WeightSumOutOfRange { .. }
            | Error::EmptyScenarioSet
            | Error::DimensionMismatch { .. }
            | Error::Misalignment { .. }
            | Error::InvalidRisk(_)
            | Error::InfeasibleEnvelope { .. }
            | Error::Schema(_)
            | Error::NonconcaveUtility(_)
            | Error::Io(_) => 2,
            Error::SlaterNotVerified { .. } => 4,
            Error::InadmissiblePolicy { .. }
            | Error::Domain(_)
            | Error::NegativeMultiplier { .. }
            | Error::GridTooLarge { .. }
            | Error::EmptyTrace => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Schema(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

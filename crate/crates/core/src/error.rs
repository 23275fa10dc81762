use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // network validation
    #[error("network is disconnected: components {components:?}")]
    Disconnected { components: Vec<Vec<String>> },
    #[error("duplicate line between buses {from} and {to}")]
    DuplicateLine { from: String, to: String },
    #[error("line {line}: {what} must be positive and finite, got {value}")]
    NonPositiveParameter {
        line: usize,
        what: &'static str,
        value: f64,
    },
    #[error("slack bus index {slack} out of range for {n} buses")]
    BadSlackIndex { slack: usize, n: usize },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    // linear algebra
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("{count} eigenvalues below tolerance; the Laplacian kernel is not one-dimensional")]
    MultipleZeroEigenvalues { count: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    // arguments
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    InvalidProbability(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // regions
    #[error("membership in the concentration region requires a risk estimator")]
    EstimatorRequired,
    #[error("base point {mu:?} is outside the {kind} region")]
    BasePointOutside { kind: String, mu: Vec<f64> },
    #[error("ray at angle {angle} does not leave the region within radius {max_radius}")]
    NonFiniteBoundary { angle: f64, max_radius: f64 },

    // case input
    #[error("case file is missing block `{0}`")]
    MissingBlock(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("branch at line {line} has zero reactance")]
    ZeroReactance { line: usize },
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("line {line} ({from}-{to}) carries zero mean flow; capacity rule is undefined")]
    ZeroMeanFlow {
        line: usize,
        from: String,
        to: String,
    },
    #[error("line {line} has no positive rate_a rating")]
    MissingRateA { line: usize },
    #[error("line {line} has no explicit capacity")]
    MissingCapacity { line: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Disconnected { .. } => "disconnected",
            Error::DuplicateLine { .. } => "duplicate_line",
            Error::NonPositiveParameter { .. } => "non_positive_parameter",
            Error::BadSlackIndex { .. } => "bad_slack_index",
            Error::InvalidNetwork(_) => "invalid_network",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotPsd { .. } => "not_psd",
            Error::MultipleZeroEigenvalues { .. } => "multiple_zero_eigenvalues",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidProbability(_) => "invalid_probability",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EstimatorRequired => "estimator_required",
            Error::BasePointOutside { .. } => "base_point_outside",
            Error::NonFiniteBoundary { .. } => "non_finite_boundary",
            Error::MissingBlock(_) => "missing_block",
            Error::MalformedRow { .. } => "malformed_row",
            Error::ZeroReactance { .. } => "zero_reactance",
            Error::SchemaViolation { .. } => "schema_violation",
            Error::ZeroMeanFlow { .. } => "zero_mean_flow",
            Error::MissingRateA { .. } => "missing_rate_a",
            Error::MissingCapacity { .. } => "missing_capacity",
            Error::Io(_) => "io",
        }
    }
}

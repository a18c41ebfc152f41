use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("design matrix is rank deficient (numerical rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("regressor has zero norm")]
    ZeroRegressor,

    #[error("{}arm {arm} has {size} units, at least {required} required", stratum_prefix(*.stratum))]
    DegenerateArm {
        stratum: Option<usize>,
        arm: u8,
        size: usize,
        required: usize,
    },

    #[error("statistic requires at least one covariate")]
    MissingCovariates,

    #[error("standard error is zero")]
    ZeroSe,

    #[error("treatment varies within cluster {cluster}")]
    MixedClusterTreatment { cluster: usize },

    #[error("stratum {stratum} is empty")]
    EmptyStratum { stratum: usize },

    #[error("invalid sizes: {0}")]
    InvalidSizes(String),

    #[error("covariate covariance matrix is singular")]
    SingularCovariance,

    #[error("no acceptable assignment after {tries} tries (acceptance rate so far {rate})")]
    AcceptanceTimeout { tries: u64, rate: f64 },

    #[error("assignment space has {count} elements, above the cap of {cap}")]
    TooLarge { count: u128, cap: u128 },

    #[error(
        "every grid point was rejected; closest to acceptance was c = {nearest} with p = {p_value}"
    )]
    EmptyAcceptanceRegion { nearest: f64, p_value: f64 },

    #[error("denominator Z'(I-H)Z is zero")]
    ZeroDenominator,

    #[error("observed assignment is not in the admissible set of the design")]
    ObservedNotAdmissible,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

fn stratum_prefix(stratum: Option<usize>) -> String {
    match stratum {
        Some(k) => format!("stratum {k}: "),
        None => String::new(),
    }
}

impl Error {
    /// Stable machine-readable tag used in JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::ZeroRegressor => "ZeroRegressor",
            Error::DegenerateArm { .. } => "DegenerateArm",
            Error::MissingCovariates => "MissingCovariates",
            Error::ZeroSe => "ZeroSe",
            Error::MixedClusterTreatment { .. } => "MixedClusterTreatment",
            Error::EmptyStratum { .. } => "EmptyStratum",
            Error::InvalidSizes(_) => "InvalidSizes",
            Error::SingularCovariance => "SingularCovariance",
            Error::AcceptanceTimeout { .. } => "AcceptanceTimeout",
            Error::TooLarge { .. } => "TooLarge",
            Error::EmptyAcceptanceRegion { .. } => "EmptyAcceptanceRegion",
            Error::ZeroDenominator => "ZeroDenominator",
            Error::ObservedNotAdmissible => "ObservedNotAdmissible",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
            Error::UnknownScenario(_) => "UnknownScenario",
        }
    }
}

use thiserror::Error;

/// Errors raised by the solver library and the benchmark harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("non-finite value in {component} evaluation")]
    EvaluationFailure { component: &'static str },

    #[error("constraint Jacobian is rank deficient (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    RankDeficientJacobian { sigma_min: f64, sigma_max: f64 },

    #[error("null space of the constraint Jacobian is empty")]
    EmptyNullSpace,

    #[error("sample-size rule for the {0} oracle has a zero denominator")]
    DegenerateOracle(&'static str),

    #[error("iteration log carries no oracle error bookkeeping")]
    DiagnosticsUnavailable,

    #[error("Cauchy point violates the fraction-of-Cauchy-decrease bound (excess {excess:e})")]
    CauchyCertificationFailure { excess: f64 },

    #[error("merit parameter escalation exceeded cap {mu_max:e}")]
    MeritEscalationFailure { mu_max: f64 },

    #[error("trust-region radius {delta:e} can no longer shrink without underflow")]
    RadiusUnderflow { delta: f64 },

    #[error("performance profile requested on an empty group")]
    EmptyGroup,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short stable tag used in CSV status columns.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownProblem(_) => "UnknownProblem",
            Error::EvaluationFailure { .. } => "EvaluationFailure",
            Error::RankDeficientJacobian { .. } => "RankDeficientJacobian",
            Error::EmptyNullSpace => "EmptyNullSpace",
            Error::DegenerateOracle(_) => "DegenerateOracle",
            Error::DiagnosticsUnavailable => "DiagnosticsUnavailable",
            Error::CauchyCertificationFailure { .. } => "CauchyCertificationFailure",
            Error::MeritEscalationFailure { .. } => "MeritEscalationFailure",
            Error::RadiusUnderflow { .. } => "RadiusUnderflow",
            Error::EmptyGroup => "EmptyGroup",
            Error::Dimension(_) => "Dimension",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
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

pub type Result<T> = std::result::Result<T, Error>;

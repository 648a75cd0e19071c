use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("initial intensity must be positive, got {0}")]
    NonPositiveLambda0(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series too short: need at least {required} observations, got {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    /// A coefficient never enters the likelihood (e.g. a regime that is never visited).
    #[error("information matrix is singular: {0}")]
    SingularInformation(String),

    #[error("information matrix is ill-conditioned (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("optimizer did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("all {0} optimizer starts failed")]
    AllStartsFailed(usize),

    #[error("threshold grid is empty")]
    EmptyGrid,

    #[error("no threshold cell could be fitted ({0} cells tried)")]
    AllCellsFailed(usize),

    /// The BPART and HPART legs coincide, so the score in the mixing weight is identically zero.
    #[error("compound legs are identical: {0}")]
    PathsIdentical(String),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("refit failed at holdout step {step} after {completed} forecasts: {message}")]
    ForecastFit {
        step: usize,
        completed: usize,
        message: String,
    },

    #[error("too many failed replicates: {failed} of {reps}")]
    TooManyFailures { failed: usize, reps: usize },
}

use thiserror::Error;

/// Errors raised by the numerical library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max |M - M^dag| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPositive { eigenvalue: f64 },

    #[error("time {time} lies outside the model domain [0, {horizon}]")]
    TimeOutOfDomain { time: f64, horizon: f64 },

    #[error("adaptive quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },

    #[error("propagator integration did not converge on [{s}, {t}]")]
    IntegratorNonConvergence { s: f64, t: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("term {0} is not in GKSL form")]
    NotGksl(usize),

    #[error("map is not Hermiticity- and trace-preserving")]
    NotHptp,

    #[error("outcome-1 probability {probability:.3e} is too small to define a post-measurement state")]
    VanishingProbability { probability: f64 },

    #[error("{what} = {value} exceeds the configured cap {cap}")]
    CapExceeded {
        what: &'static str,
        value: u64,
        cap: u64,
    },

    #[error("trial cap {cap} reached before slot {slot} met its tolerance")]
    TrialCapExceeded { slot: usize, cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

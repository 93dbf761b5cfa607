use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid jump kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("horizon mismatch: {a} vs {b}")]
    HorizonMismatch { a: f64, b: f64 },

    #[error("operation requires dimension {required}, path has dimension {found}")]
    UnsupportedDimension { required: usize, found: usize },

    #[error("site {site:?} lies outside the certified window of radius {radius}")]
    OutsideWindow { site: Vec<i32>, radius: i64 },

    #[error("walk reached sup-norm {reached}, beyond the certified reach {reach}; enlarge the window")]
    WalkEscaped { reached: i64, reach: i64 },

    #[error("time {time} outside [0, {horizon}]")]
    TimeOutOfRange { time: f64, horizon: f64 },

    #[error("unstable step: dt = {dt} exceeds the stability bound {bound}")]
    Unstable { dt: f64, bound: f64 },

    #[error("trap kernel must be symmetric for this estimator")]
    NonSymmetricKernel,

    #[error("{0}")]
    Unsupported(String),

    #[error("sample budget `{0}` must be positive")]
    EmptyBudget(&'static str),

    #[error("estimate at t = {t} too noisy to fit (relative standard error {rel_se:.3})")]
    NoisyFit { t: f64, rel_se: f64 },

    #[error("effective sample size {n_eff:.2} below the usable floor {floor}")]
    DegenerateEnsemble { n_eff: f64, floor: f64 },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("weight field has a negative entry {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("empirical contraction ratio {kappa_sq} is not below 1")]
    NoContraction { kappa_sq: f64 },

    #[error("backward orbit escaped at step {step}: |p| = {momentum} exceeds bound {bound}")]
    OrbitEscaped {
        step: usize,
        momentum: f64,
        bound: f64,
    },

    #[error("point {0:?} lies on the detected cut locus")]
    CutLocus(Vec<f64>),

    #[error("matrix is singular to machine precision")]
    Singular,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("Markov normalization defect {defect:e} exceeds {limit:e}")]
    Normalization { defect: f64, limit: f64 },

    #[error("minorization level set {{V <= {level}}} is empty")]
    EmptyLevelSet { level: f64 },

    #[error("parameters not admissible: {0}")]
    Admissibility(String),

    #[error("contraction ratio {ratio} exceeds certified factor {alpha}")]
    CertificationInconsistent { ratio: f64, alpha: f64 },

    #[error("viscosity {nu} is below the grid resolution floor {floor} (need sqrt(2 nu) >= 3 h)")]
    ViscosityBelowFloor { nu: f64, floor: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("unsupported mesh: {0}")]
    UnsupportedMesh(String),
    #[error("unsupported quadrature degree {degree} (maximum {max})")]
    UnsupportedDegree { degree: usize, max: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid potential grid: {0}")]
    InvalidGrid(String),
    #[error("no admissible stabilisation parameter: 4h^2 E/pi^2 = {ratio} >= 1")]
    NoAdmissibleSigma { ratio: f64 },
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("assembly failure: {0}")]
    Assembly(String),
    #[error("gradient flow stagnated after {iterations} iterations: no energy-decreasing step above tau_min")]
    Stagnation {
        iterations: usize,
        trace: crate::solver::FlowTrace,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

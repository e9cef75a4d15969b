use std::path::PathBuf;

use gpehho_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not read {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("no admissible stabilisation parameter at any level")]
    Infeasible,
    #[error("certificate slack is negative at level(s) {0:?}")]
    NegativeSlack(Vec<usize>),
    #[error("cannot render series {series:?}: {reason}")]
    Render { series: String, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status: 2 invalid configuration, 3 solver stagnation,
    /// 4 infeasible sigma everywhere, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ReadConfig { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::Stagnation { .. } => 3,
                CoreError::NoAdmissibleSigma { .. } => 4,
                CoreError::InvalidDomain(_)
                | CoreError::InvalidParameter(_)
                | CoreError::InvalidMode(_)
                | CoreError::InvalidGrid(_)
                | CoreError::UnsupportedDegree { .. } => 2,
                _ => 1,
            },
            CliError::Infeasible => 4,
            _ => 1,
        }
    }
}

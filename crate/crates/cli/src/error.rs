use thiserror::Error;

/// Failures mapped to distinct exit statuses.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Assertion(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Other(_) => 1,
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Assertion(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Solver(_) => "solver",
            Self::Assertion(_) => "assertion",
            Self::Other(_) => "other",
        }
    }
}

impl From<edgesched_core::Error> for CliError {
    fn from(e: edgesched_core::Error) -> Self {
        use edgesched_core::Error as E;
        match e {
            E::SolverResidual { .. } => Self::Solver(e.to_string()),
            E::InvalidParams(_) | E::InvalidState(_) | E::InvalidChainIndex { .. } => Self::Config(e.to_string()),
            E::NotInEdgeSet(_) | E::InvalidAction(_) => Self::Other(e.to_string()),
        }
    }
}

use thiserror::Error;

/// Failures of a harness run; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Core(#[from] weyl_persistence::Error),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("verification failed: {}", .0.join(", "))]
    VerificationFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use weyl_persistence::Error as E;
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::Core(E::InsufficientData { .. }) => 3,
            CliError::Core(E::GridTooLarge { .. }) => 4,
            CliError::Core(E::FactorizationFailed { .. }) => 5,
            CliError::Core(E::OddDegreeWholeLine { .. }) => 6,
            CliError::Core(E::PrecisionLoss { .. }) => 7,
            CliError::Core(E::InvalidParameter(_)) => 8,
            CliError::Io(_) => 9,
            CliError::VerificationFailed(_) => 10,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] meanreflect::Error),
    #[error("unknown verify suite {0:?}")]
    UnknownSuite(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl CliError {
    /// Machine-readable tag, stable across releases.
    pub fn reason(&self) -> &'static str {
        match self {
            CliError::Config(_) => "invalid-config",
            CliError::Io(_) => "io-error",
            CliError::Solver(e) => e.reason(),
            CliError::UnknownSuite(_) => "unknown-suite",
            CliError::VerifyFailed(_) => "verification-failed",
        }
    }

    /// 2 for an infeasible terminal condition, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(meanreflect::Error::InfeasibleTerminal { .. }) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": self.reason(), "message": self.to_string() })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

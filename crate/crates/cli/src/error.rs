use std::fmt;
use std::process::ExitCode;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Usage(String),
    /// Unreadable, missing or malformed data (exit 3).
    Data(String),
    /// Training diverged (exit 4).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<sparsehash::Error> for CliError {
    fn from(e: sparsehash::Error) -> Self {
        use sparsehash::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite { .. } => CliError::Numeric(msg),
            E::Config(_) | E::InvalidArgument(_) | E::Dimension { .. } | E::Rank { .. } => CliError::Usage(msg),
            E::EmptyInput(_) | E::InsufficientData { .. } | E::Format(_) | E::Io(_) => CliError::Data(msg),
        }
    }
}

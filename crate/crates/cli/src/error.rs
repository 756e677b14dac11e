use std::fmt;

/// Failures surfaced by the command-line front end. The variant decides the
/// process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 1.
    Usage(String),
    /// Unreadable, mismatched or otherwise unusable inputs; exit code 2.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<decloss::Error> for CliError {
    fn from(e: decloss::Error) -> Self {
        match e {
            decloss::Error::Config(m) => CliError::Usage(format!("invalid configuration: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

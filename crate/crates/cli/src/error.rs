use std::fmt;

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or input data (exit 1).
    Validation(String),
    /// A numerical routine failed on valid input (exit 2).
    Computation(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Computation(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Computation(_) => "computation",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Computation(m) => f.write_str(m),
        }
    }
}

impl From<cyrisk::Error> for CliError {
    fn from(e: cyrisk::Error) -> Self {
        use cyrisk::Error::*;
        match e {
            Degenerate(_) | Numerical(_) => CliError::Computation(e.to_string()),
            InvalidInput(_) | Format(_) | Csv(_) | Io(_) => CliError::Validation(e.to_string()),
        }
    }
}

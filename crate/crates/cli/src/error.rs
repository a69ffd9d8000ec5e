use std::fmt;

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration (exit 1).
    Config(String),
    /// Anything that fails after the config was accepted (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn config(field: &str, e: impl fmt::Display) -> Self {
        CliError::Config(format!("{field}: {e}"))
    }

    pub fn runtime(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {e}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hybrid_attn::Error> for CliError {
    fn from(e: hybrid_attn::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

use collapse_core::CollapseError;
use thiserror::Error;

/// Exit code when every assertion of a campaign held.
pub const EXIT_PASS: u8 = 0;
/// Exit code when the campaign ran but an assertion failed.
pub const EXIT_ASSERTION: u8 = 1;
/// Exit code for config or invocation errors; nothing is written.
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] CollapseError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(_) => EXIT_CONFIG,
            CliError::Core(_) => EXIT_ASSERTION,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

/// Maps a core validation failure to a config error, prefixed with the field path.
pub fn invalid(section: &str, e: CollapseError) -> CliError {
    CliError::Config(format!("[{section}] {e}"))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

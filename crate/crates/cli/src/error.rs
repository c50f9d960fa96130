use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Harness error, grouped into the categories that map to exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<reset_opt::Error> for CliError {
    fn from(e: reset_opt::Error) -> Self {
        use reset_opt::Error as E;
        match e {
            E::Numeric(_) => CliError::Numeric(e.to_string()),
            E::Io(_) | E::Csv(_) | E::Format(_) => CliError::Io(e.to_string()),
            E::Dimension(_) | E::Input(_) | E::Argument(_) | E::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

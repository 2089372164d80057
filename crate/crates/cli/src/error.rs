use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error at `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(String),

    #[error(transparent)]
    Solver(#[from] kmconsensus::Error),
}

impl CliError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CliError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Field { .. } | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_RUNTIME,
            CliError::Solver(kmconsensus::Error::Infeasible { .. }) => EXIT_INFEASIBLE,
            CliError::Solver(_) => EXIT_RUNTIME,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

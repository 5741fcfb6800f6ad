use std::fmt;

use serde::Serialize;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

/// A failure with its exit code, reported on stderr as one JSON object.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    #[serde(skip)]
    pub code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failed_pairs: Vec<String>,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: "validation",
            code: EXIT_VALIDATION,
            message: message.into(),
            failed_pairs: Vec::new(),
        }
    }

    pub fn transport(message: impl Into<String>, failed_pairs: Vec<String>) -> Self {
        CliError {
            kind: "transport",
            code: EXIT_TRANSPORT,
            message: message.into(),
            failed_pairs,
        }
    }

    pub fn partial(message: impl Into<String>, failed_pairs: Vec<String>) -> Self {
        CliError {
            kind: "partial",
            code: EXIT_PARTIAL,
            message: message.into(),
            failed_pairs,
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            kind: "io",
            code: 1,
            message: message.into(),
            failed_pairs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("error serializes");
        v["exit_code"] = self.code.into();
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

/// Input problems are validation errors; anything else on the way out is I/O.
pub trait OrValidation<T> {
    fn invalid(self, what: &str) -> Result<T, CliError>;
    fn io_context(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> OrValidation<T> for Result<T, E> {
    fn invalid(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::validation(format!("{what}: {e}")))
    }

    fn io_context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::io(format!("{what}: {e}")))
    }
}

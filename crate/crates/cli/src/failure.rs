use std::io::ErrorKind;

use manigrad::Error;
use serde_json::json;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_FORMAT_VERSION: i32 = 4;
pub const EXIT_CORRUPT: i32 = 5;

/// Anything that ends a run with a non-zero exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

pub type CliResult<T> = std::result::Result<T, Failure>;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

pub fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

impl Failure {
    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(Error::Io { source, .. }) if source.kind() == ErrorKind::NotFound => "missing-file",
            Failure::Core(Error::Io { .. }) => "io",
            Failure::Core(Error::FormatVersion { .. }) => "format-version",
            Failure::Core(Error::Corrupt { .. }) => "corrupt-file",
            Failure::Core(Error::Json(_)) => "json",
            Failure::Core(Error::InvalidArgument(_)) => "invalid-argument",
            Failure::Core(Error::ShapeMismatch { .. }) => "shape-mismatch",
            Failure::Core(Error::NonFiniteLoss { .. }) => "non-finite-loss",
            Failure::Core(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => EXIT_USAGE,
            "missing-file" => EXIT_MISSING_FILE,
            "format-version" => EXIT_FORMAT_VERSION,
            "corrupt-file" => EXIT_CORRUPT,
            _ => EXIT_OTHER,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }

    /// Single-line JSON object for stderr.
    pub fn to_json_line(&self) -> String {
        json!({
            "error": self.kind(),
            "exitCode": self.exit_code(),
            "message": self.message().replace('\n', " "),
        })
        .to_string()
    }
}

use std::fmt;
use std::process::ExitCode;

use attn_edit::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Format,
    Validation,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Usage => 2,
            Kind::Format => 3,
            Kind::Validation => 4,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Format => "format",
            Kind::Validation => "validation",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // One line, so scripts can grep on the `error[...]` prefix.
        let msg = self.message.replace('\n', " ");
        write!(f, "error[{}]: {msg}", self.kind.tag())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Format { .. } | Error::Io { .. } => Kind::Format,
            Error::NoConvergence { .. } => Kind::Validation,
            _ => Kind::Usage,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

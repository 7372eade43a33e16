use std::process::ExitCode;

use echodoa::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Validation,
    Runtime,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Runtime => 1,
            Kind::Usage => 2,
            Kind::Validation => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Validation => "validation",
            Kind::Runtime => "runtime",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { kind: Kind::Usage, message }
    }

    pub fn validation(message: String) -> Self {
        CliError { kind: Kind::Validation, message }
    }

    pub fn runtime(message: String) -> Self {
        CliError { kind: Kind::Runtime, message }
    }

    /// Prints the one-line error record to stderr and returns the exit code.
    ///
    /// Format: `error kind=<usage|validation|runtime> code=<n> message="<text>"`
    pub fn report(&self) -> ExitCode {
        eprintln!("error kind={} code={} message={:?}", self.kind.name(), self.kind.code(), self.message);
        ExitCode::from(self.kind.code())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidConfig(_)
            | Error::InvalidGeometry(_)
            | Error::InvalidScenario(_)
            | Error::ScenarioOutOfWindow { .. }
            | Error::ApertureViolation { .. }
            | Error::ShapeMismatch(_)
            | Error::EmptyDataset
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::ChecksumMismatch { .. }
            | Error::Truncated(_)
            | Error::RateMismatch { .. }
            | Error::IncompatibleCheckpoint(_)
            | Error::MissingEstimator(_)
            | Error::Parse(_) => Kind::Validation,
            _ => Kind::Runtime,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

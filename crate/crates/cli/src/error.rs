use std::fmt;

use trackfill_core::corpus::CorpusError;
use trackfill_core::eval::experiments::ExperimentError;
use trackfill_core::sampler::SampleError;
use trackfill_server::{ConfigError, ServeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Input,
    Generation,
    Io,
}

impl ErrorClass {
    pub fn code(self) -> u8 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Config => 3,
            ErrorClass::Input => 4,
            ErrorClass::Generation => 5,
            ErrorClass::Io => 6,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Config => "config",
            ErrorClass::Input => "input",
            ErrorClass::Generation => "generation",
            ErrorClass::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        CliError { class, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Usage, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Input, message)
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(ErrorClass::Io, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.class.name(), self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(ErrorClass::Config, e.to_string())
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        let class = match e {
            ServeError::Model { .. } | ServeError::Table { .. } => ErrorClass::Config,
            _ => ErrorClass::Io,
        };
        Self::new(class, e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        Self::new(ErrorClass::Input, e.to_string())
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        let class = match e {
            SampleError::EmptyMask
            | SampleError::InvalidRequest(_)
            | SampleError::Encode(_)
            | SampleError::Temperature(_) => ErrorClass::Input,
            _ => ErrorClass::Generation,
        };
        Self::new(class, e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Sample(s) => s.into(),
            ExperimentError::Io(io) => Self::new(ErrorClass::Io, io.to_string()),
            other => Self::new(ErrorClass::Input, other.to_string()),
        }
    }
}

use afbart::config::ConfigError;
use afbart::data::DataError;
use afbart::io::IoError;
use afbart::metrics::MetricError;
use afbart::sampler::SamplerError;
use afbart::simgen::SimError;
use thiserror::Error;

/// Failures split by exit code: bad input (1) or a failed computation (2).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(_) | SamplerError::Data(_) | SamplerError::Prior(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(ConfigError, DataError, MetricError, SimError);

use adaptact_core::activations::ActivationError;
use adaptact_core::data::DataError;
use adaptact_core::network::NetworkError;
use adaptact_core::trainer::TrainError;
use thiserror::Error;

/// Errors grouped by the process exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Output(_) => 1,
        }
    }

    /// Prefixes the message with where it happened, keeping the category.
    pub fn context(self, at: impl std::fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{at}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{at}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{at}: {m}")),
            CliError::Output(m) => CliError::Output(format!("{at}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::EmptyDataset(_) => CliError::Data(e.to_string()),
            TrainError::GradientShape { .. } | TrainError::Network(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Io(_) | NetworkError::Json(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ActivationError> for CliError {
    fn from(e: ActivationError) -> Self {
        CliError::Config(e.to_string())
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

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

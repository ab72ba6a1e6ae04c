//! Library half of the `procplan` binary: configuration resolution, the
//! subcommand implementations, and the error-to-exit-code mapping.

pub mod commands;
pub mod config;

use procplan::envgen::DataError;
use procplan::eval::EvalError;
use procplan::model::ModelError;
use procplan::planner::PlanError;
use procplan::train::TrainError;
use thiserror::Error;

/// Process-level failure classes. Exit codes: config 2, data 3, numeric 4,
/// anything else 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(_) | DataError::InvalidFamily(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Dim(_) | ModelError::ActionRange { .. } => {
                CliError::Config(e.to_string())
            }
            ModelError::Num(_) => CliError::Numeric(e.to_string()),
            ModelError::Io(_) | ModelError::Corrupt(_) | ModelError::Version { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(inner) => inner.into(),
            TrainError::Num(_) | TrainError::NonFiniteLoss { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::EmptyTrainSet | TrainError::EmptyTestSet => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Model(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Plan(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}

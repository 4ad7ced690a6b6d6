//! Error-to-exit-code mapping: 0 success, 1 I/O, 2 configuration,
//! 3 assumption violation, 4 numeric abort, 5 artifact mismatch.

use sucrep::eval::EvalError;
use sucrep::grid::GridError;
use sucrep::linrep::LinRepError;
use sucrep::mdp::MdpError;
use sucrep::nn::CheckpointError;
use sucrep::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Assumption(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Artifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Assumption(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Artifact(_) => 5,
        }
    }

    pub fn io(e: impl std::fmt::Display) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Generation(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<MdpError> for CliError {
    fn from(e: MdpError) -> Self {
        match e {
            MdpError::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LinRepError> for CliError {
    fn from(e: LinRepError) -> Self {
        match e {
            LinRepError::AssumptionViolated(_) => CliError::Assumption(e.to_string()),
            LinRepError::Numeric(_) => CliError::Numeric(e.to_string()),
            LinRepError::Mdp(inner) => inner.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numeric { .. } => CliError::Numeric(e.to_string()),
            TrainError::Artifact(_) => CliError::Artifact(e.to_string()),
            TrainError::Grid(inner) => inner.into(),
            TrainError::Mdp(inner) => inner.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(inner) => inner.into(),
            EvalError::Grid(inner) => inner.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(inner) => CliError::Io(inner.to_string()),
            _ => CliError::Artifact(e.to_string()),
        }
    }
}

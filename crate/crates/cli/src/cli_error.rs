//! Error classification for process exit codes: 2 for configuration
//! problems, 3 for data problems (missing or malformed files, empty
//! splits), 4 for numeric failures during training or evaluation.

use weakheight_core::ensemble::{CheckpointError, ModelError};
use weakheight_core::evalsuite::EvalError;
use weakheight_core::heightbins::SampleError;
use weakheight_core::losses::LossError;
use weakheight_core::manifest::ManifestError;
use weakheight_core::synthcity::GenerationError;
use weakheight_core::trainer::TrainError;
use weakheight_core::ContainerError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(_) | ModelError::BranchOutOfRange { .. } => {
                CliError::Config(e.to_string())
            }
            ModelError::IndivisibleInput { .. } | ModelError::WrongChannels { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            LossError::Sample(s) => s.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::BadFraction(_) => CliError::Config(e.to_string()),
            SampleError::NanHeight => CliError::Numeric(e.to_string()),
            SampleError::EmptyInput => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Bins(_) | TrainError::Aug(_) => {
                CliError::Config(e.to_string())
            }
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteValidation { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            TrainError::Sampling(s) => s.into(),
            TrainError::Loss(l) => l.into(),
            TrainError::NoTrainData
            | TrainError::NoValData
            | TrainError::EmptyBatch
            | TrainError::EmptyLog
            | TrainError::Eval(_)
            | TrainError::Checkpoint(_)
            | TrainError::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        // Placement exhaustion depends on the random draw, but the fix is
        // always a plan change (fewer or smaller buildings), so every
        // generation failure is surfaced as a configuration problem.
        CliError::Config(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

use ranker_core::evaluation::EvalError;
use ranker_core::feature_store::FeatureStoreError;
use ranker_core::rankers::RankerError;
use ranker_core::training::{CheckpointError, TrainError};

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Usage(String),
    /// Exit 3: unreadable, malformed or incompatible inputs.
    Data(String),
    /// Exit 4: training or evaluation failed.
    Run(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Run(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Run(m) => m,
        }
    }
}

impl From<FeatureStoreError> for Failure {
    fn from(e: FeatureStoreError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<RankerError> for Failure {
    fn from(e: RankerError) -> Self {
        match e {
            RankerError::Dimension { .. } => Failure::Data(e.to_string()),
            RankerError::Contract(_) => Failure::Usage(e.to_string()),
            RankerError::Kernel(_) => Failure::Run(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(e) => e.into(),
            TrainError::Ranker(e) => e.into(),
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            TrainError::Objective(_) | TrainError::EmptyAfterFilter(_) => Failure::Run(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Ranker(e) => e.into(),
            EvalError::Data(e) => e.into(),
            EvalError::Train(e) => e.into(),
            EvalError::Contract(_) => Failure::Usage(e.to_string()),
        }
    }
}

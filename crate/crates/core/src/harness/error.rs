use thiserror::Error;

use crate::curriculum::CurriculumError;
use crate::datagen::DatagenError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::training::TrainingError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn numerics_is_io(e: &NumericsError) -> bool {
    matches!(e, NumericsError::Io(_))
}

fn model_is_io(e: &ModelError) -> bool {
    match e {
        ModelError::Io(_) | ModelError::Data(DatagenError::Io(_)) => true,
        ModelError::Numerics(n) => numerics_is_io(n),
        _ => false,
    }
}

impl HarnessError {
    /// True when the failure came from the file system rather than from the
    /// inputs' content.
    pub fn is_io(&self) -> bool {
        match self {
            Self::Io(_) | Self::Data(DatagenError::Io(_)) => true,
            Self::Numerics(n) => numerics_is_io(n),
            Self::Model(m) => model_is_io(m),
            Self::Curriculum(CurriculumError::Model(m)) => model_is_io(m),
            Self::Training(t) => match t {
                TrainingError::Io(_) | TrainingError::Data(DatagenError::Io(_)) => true,
                TrainingError::Model(m) | TrainingError::Curriculum(CurriculumError::Model(m)) => model_is_io(m),
                TrainingError::Numerics(n) => numerics_is_io(n),
                _ => false,
            },
            _ => false,
        }
    }

    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_io() {
            2
        } else {
            1
        }
    }
}

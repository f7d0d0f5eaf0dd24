//! Deterministic training runs: configuration, data order, the optimizer
//! loop, metrics files and matched multi-schedule comparisons.

mod compare;
mod config;
mod data;
mod metrics;
mod run;

use thiserror::Error;

pub use compare::{matched_pair_run, ComparisonRow, FINAL_WINDOW};
pub use config::{RunConfig, METRICS_FILE, RESOLVED_CONFIG_FILE};
pub use data::{DataLoader, Dataset};
pub use metrics::{
    load_metrics, read_metrics, save_metrics, train_losses, write_metrics, RecordSplit, RunRecord, METRICS_HEADER,
};
pub use run::{
    output_files, strict_mode, train, train_on, validation_loss, TrainOptions, TrainOutcome, THREADS_ENV,
};

use crate::curriculum::CurriculumError;
use crate::datagen::DatagenError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error("non-finite value at step {step}; last good parameters kept: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for TrainingError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Self::Io(io),
                other => Self::Format(format!("{other:?}")),
            }
        } else {
            Self::Format(e.to_string())
        }
    }
}

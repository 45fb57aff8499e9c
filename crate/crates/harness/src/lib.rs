//! Training, evaluation and experiment drivers for the task-informed
//! predictor, plus the pieces of the `tip` command line tool.

pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiments;
pub mod train;

use thiserror::Error;
use tip_core::autodiff::AutodiffError;
use tip_core::geometry::GeometryError;
use tip_core::losses::LossError;
use tip_core::metrics::MetricsError;
use tip_core::model::{Checkpoint, ModelError};
use tip_core::simgen::SimgenError;
use tip_core::tasks::TaskError;

pub use config::{ConfigError, RunConfig, TrainConfig};
pub use data::{prepare_examples, split_by_id, Example};
pub use eval::{evaluate, evaluate_predictor, OraclePredictor, Predictor};
pub use train::{train, EpochLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("config does not match the data: {0}")]
    ConfigMismatch(String),
    #[error("bad dataset: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Simgen(#[from] SimgenError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

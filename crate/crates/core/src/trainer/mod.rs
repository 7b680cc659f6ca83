//! Triplet training: speaker-balanced batches, in-batch semi-hard mining,
//! the hinge loss and the optimization loop with periodic dev scoring.

mod batch;
mod grid;
mod loss;
mod mining;
mod optim;
mod train;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::clustering::ClusterError;
use crate::encoder::EncoderError;
use crate::metrics::MetricError;

pub use batch::{sample_batch, BatchSpec, DatasetIndex, SpeakerSegments, TripletBatch};
pub use grid::{grid_search, GridCell};
pub use loss::{hinge_mean, triplet_loss};
pub use mining::{mine_semi_hard, pairwise_sq_distances, Triple};
pub use optim::{Adam, AdamConfig};
pub use train::{EvalRecord, StepRecord, TrainConfig, TrainEvent, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid batch spec: {0}")]
    BatchSpec(String),
    #[error("need {needed} speakers with at least {per_speaker} segments each, found {found}")]
    InsufficientSpeakers { needed: usize, per_speaker: usize, found: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: u64, loss: f64 },
    #[error("dev set: {0}")]
    DevSet(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<crate::autodiff::TensorError> for TrainError {
    fn from(e: crate::autodiff::TensorError) -> Self {
        Self::Encoder(e.into())
    }
}

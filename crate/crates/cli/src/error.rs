use std::io;
use std::path::PathBuf;

use diarize_core::checkpoint::CheckpointError;
use diarize_core::clustering::ClusterError;
use diarize_core::dsp::FeatureError;
use diarize_core::encoder::EncoderError;
use diarize_core::metrics::MetricError;
use diarize_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Audio { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(TrainError),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => Self::Numeric(e.to_string()),
            TrainError::BatchSpec(_) | TrainError::Config(_) => Self::Usage(e.to_string()),
            other => Self::Train(other),
        }
    }
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }

    /// 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config { .. } | Self::Encoder(EncoderError::Config(_)) => 1,
            Self::Numeric(_) => 3,
            _ => 2,
        }
    }
}

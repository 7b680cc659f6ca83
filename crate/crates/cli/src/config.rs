use std::fs;
use std::path::Path;

use diarize_core::clustering::ClusteringConfig;
use diarize_core::dsp::FeatureConfig;
use diarize_core::encoder::EncoderConfig;
use diarize_core::trainer::{AdamConfig, BatchSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub iterations: u64,
    pub min_segments: usize,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_interval: u64,
    pub eval_restarts: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self { iterations: 2000, min_segments: 45, checkpoint_interval: 200, eval_restarts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    /// Seconds excluded on each side of every reference boundary.
    pub collar: f64,
    pub skip_overlap: bool,
    /// Dev scoring period in iterations; 0 disables it.
    pub eval_interval: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { collar: 0.25, skip_overlap: true, eval_interval: 200 }
    }
}

/// Everything a run depends on. Written next to every output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub batch: BatchSpec,
    pub optimizer: AdamConfig,
    pub training: TrainingParams,
    pub clustering: ClusteringConfig,
    pub eval: EvalParams,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })?;
        Self::from_json(&text).map_err(|message| CliError::Config { path: path.into(), message })
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let config: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()).map_err(CliError::io(format!("writing {}", path.display())))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.features.validate().map_err(|e| e.to_string())?;
        self.encoder.validate().map_err(|e| e.to_string())?;
        self.train_config().validate().map_err(|e| e.to_string())?;
        if self.encoder.input_dim != self.features.feature_dim() {
            return Err(format!(
                "encoder input_dim {} does not match feature width {}",
                self.encoder.input_dim,
                self.features.feature_dim()
            ));
        }
        let c = &self.clustering;
        if c.k_min < 2 || c.k_max < c.k_min {
            return Err(format!("clustering bounds k_min {} k_max {} are invalid", c.k_min, c.k_max));
        }
        if !(self.eval.collar >= 0.0 && self.eval.collar.is_finite()) {
            return Err(format!("collar {} must be non-negative", self.eval.collar));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            optimizer: self.optimizer,
            iterations: self.training.iterations,
            eval_interval: self.eval.eval_interval,
            min_segments: self.training.min_segments,
            eval_restarts: self.training.eval_restarts,
            seed: self.seed,
        }
    }
}

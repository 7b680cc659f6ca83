use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mine_semi_hard, pairwise_sq_distances, sample_batch, triplet_loss, Adam, AdamConfig, BatchSpec, DatasetIndex, TrainError};
use crate::autodiff::{Tape, Tensor};
use crate::checkpoint::{Checkpoint, CheckpointError, RngState, TrainingRecord};
use crate::clustering::KMeans;
use crate::dsp::SegmentFeatures;
use crate::encoder::EncoderModel;
use crate::matrix::Matrix;
use crate::metrics::{nmi, purity, LabelPair};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch: BatchSpec,
    pub optimizer: AdamConfig,
    /// Total iterations, counted from the start of training.
    pub iterations: u64,
    /// Dev scoring period in iterations; 0 disables it.
    pub eval_interval: u64,
    /// Speakers with fewer training segments are ignored.
    pub min_segments: usize,
    /// k-means restarts when scoring the dev set.
    pub eval_restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: BatchSpec::default(),
            optimizer: AdamConfig::default(),
            iterations: 2000,
            eval_interval: 200,
            min_segments: 45,
            eval_restarts: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.batch.validate()?;
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be finite and non-negative", o.learning_rate)));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(TrainError::Config("moment decays must lie in [0, 1)".into()));
        }
        if !(o.epsilon > 0.0) {
            return Err(TrainError::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Dev-set clustering scores at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub nmi: f64,
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub loss: f64,
    pub triples: usize,
    pub wall_ms: u128,
}

impl StepRecord {
    /// `iteration \t loss \t triples \t wall-ms`, with nmi and purity
    /// appended when the iteration was scored.
    pub fn log_line(&self, eval: Option<&EvalRecord>) -> String {
        let mut line = format!("{}\t{}\t{}\t{}", self.iteration, self.loss, self.triples, self.wall_ms);
        if let Some(e) = eval {
            line.push_str(&format!("\t{}\t{}", e.nmi, e.purity));
        }
        line
    }
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step(&'a StepRecord, Option<&'a EvalRecord>),
}

/// Single-writer training state: model, optimizer, batch RNG and history.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    model: EncoderModel<S>,
    adam: Adam<S>,
    rng: ChaCha8Rng,
    iteration: u64,
    losses: Vec<f64>,
    evals: Vec<EvalRecord>,
    config: TrainConfig,
    index: DatasetIndex,
}

fn index_for<S>(train: &[SegmentFeatures<S>], config: &TrainConfig) -> Result<DatasetIndex, TrainError> {
    let index = DatasetIndex::new(train.iter().map(|s| s.speaker_id.as_str()), config.min_segments);
    let per = config.batch.per_speaker();
    let found = index.eligible(per);
    if found < config.batch.speakers_per_batch {
        return Err(TrainError::InsufficientSpeakers { needed: config.batch.speakers_per_batch, per_speaker: per, found });
    }
    Ok(index)
}

impl<S: Scalar> Trainer<S> {
    /// Fresh state over the training set `train`; the same slice must be
    /// passed to every later step.
    pub fn new(model: EncoderModel<S>, config: TrainConfig, train: &[SegmentFeatures<S>]) -> Result<Self, TrainError> {
        config.validate()?;
        let index = index_for(train, &config)?;
        let adam = Adam::new(config.optimizer, model.params());
        Ok(Self {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iteration: 0,
            losses: Vec::new(),
            evals: Vec::new(),
            config,
            index,
        })
    }

    /// Restores a state saved with [`Self::to_checkpoint`]. `config` should
    /// match the original run except for `iterations`.
    pub fn resume(checkpoint: &Checkpoint, config: TrainConfig, train: &[SegmentFeatures<S>]) -> Result<Self, TrainError> {
        config.validate()?;
        let record = checkpoint
            .training
            .as_ref()
            .ok_or_else(|| CheckpointError::Malformed("no training state in checkpoint".into()))?;
        let model = EncoderModel::from_checkpoint(checkpoint)?;
        let adam = Adam::from_entries(config.optimizer, model.params(), &record.moments)
            .ok_or_else(|| CheckpointError::Malformed("optimizer state incomplete".into()))?;
        let mut rng = ChaCha8Rng::from_seed(record.rng.seed);
        rng.set_stream(record.rng.stream);
        rng.set_word_pos(record.rng.word_pos);
        let index = index_for(train, &config)?;
        Ok(Self { model, adam, rng, iteration: record.iteration, losses: record.losses.clone(), evals: Vec::new(), config, index })
    }

    /// Checkpoint with full training state; `config_json` is stored as the
    /// provenance record and must contain the encoder config (directly or
    /// under `"encoder"`).
    pub fn to_checkpoint(&self, config_json: String) -> Checkpoint {
        Checkpoint {
            config_json,
            params: self.model.param_entries(),
            training: Some(TrainingRecord {
                iteration: self.iteration,
                moments: self.adam.entries(self.model.params()),
                rng: RngState { seed: self.rng.get_seed(), stream: self.rng.get_stream(), word_pos: self.rng.get_word_pos() },
                losses: self.losses.clone(),
            }),
        }
    }

    pub fn model(&self) -> &EncoderModel<S> {
        &self.model
    }

    pub fn into_model(self) -> EncoderModel<S> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn evals(&self) -> &[EvalRecord] {
        &self.evals
    }

    pub fn optimizer(&self) -> &Adam<S> {
        &self.adam
    }

    /// sample → embed → mine → loss → backward → update. With no mined
    /// triples the loss is 0 and the parameters are left untouched.
    pub fn step(&mut self, train: &[SegmentFeatures<S>]) -> Result<StepRecord, TrainError> {
        let started = Instant::now();
        let iteration = self.iteration + 1;
        let batch = sample_batch(&self.index, &self.config.batch, &mut self.rng)?;
        let frames: Vec<&Matrix<S>> = batch.segments.iter().map(|&i| &train[i].frames).collect();
        let (loss, triples) = self.train_on(&frames, &batch.labels).map_err(|e| match e {
            TrainError::NonFiniteLoss { loss, .. } => TrainError::NonFiniteLoss { iteration, loss },
            other => other,
        })?;
        self.iteration = iteration;
        self.losses.push(loss);
        Ok(StepRecord { iteration, loss, triples, wall_ms: started.elapsed().as_millis() })
    }

    /// One optimizer update on a given labeled batch; returns the loss before
    /// the update and the number of mined triples. Does not advance the
    /// iteration counter.
    pub fn train_on(&mut self, frames: &[&Matrix<S>], labels: &[usize]) -> Result<(f64, usize), TrainError> {
        let margin = S::lit(self.config.batch.margin);
        let embeddings = self.model.embed_batch(frames)?;
        if !embeddings.is_finite() {
            // NaN distances would mine nothing and hide the divergence
            return Err(TrainError::NonFiniteLoss { iteration: self.iteration + 1, loss: f64::NAN });
        }
        let triples = mine_semi_hard(&pairwise_sq_distances(&embeddings), labels, margin);
        let mut tape = Tape::new();
        let e = tape.leaf(Tensor::from_matrix(&embeddings).with_requires_grad(true));
        let loss_var = triplet_loss(&mut tape, e, &triples, margin)?;
        let loss = tape.value(loss_var).values()[0].to_f64_lossy();
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { iteration: self.iteration + 1, loss });
        }
        if !triples.is_empty() {
            tape.backward(loss_var)?;
            let upstream = Matrix::from_vec(embeddings.rows(), embeddings.cols(), tape.grad(e).expect("leaf tracks grad").to_vec())
                .expect("gradient matches embedding shape");
            let grads = self.model.embedding_gradients(frames, &upstream)?;
            self.adam.step(self.model.params_mut(), &grads);
        }
        Ok((loss, triples.len()))
    }

    /// k-means with the true speaker count on dev embeddings, scored by NMI
    /// and purity against the speaker labels.
    pub fn evaluate(&self, dev: &[SegmentFeatures<S>]) -> Result<EvalRecord, TrainError> {
        let (nmi, purity) = score_embeddings(&self.model, dev, self.config.seed, self.config.eval_restarts)?;
        Ok(EvalRecord { iteration: self.iteration, nmi, purity })
    }

    /// Steps until `config.iterations`, scoring `dev` every `eval_interval`
    /// iterations and reporting each step to `observer`.
    pub fn run(
        &mut self,
        train: &[SegmentFeatures<S>],
        dev: Option<&[SegmentFeatures<S>]>,
        mut observer: impl FnMut(&Self, TrainEvent<'_>) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        while self.iteration < self.config.iterations {
            let record = self.step(train)?;
            let interval = self.config.eval_interval;
            let eval = match dev {
                Some(dev) if interval > 0 && record.iteration % interval == 0 => {
                    let e = self.evaluate(dev)?;
                    self.evals.push(e);
                    Some(e)
                }
                _ => None,
            };
            observer(self, TrainEvent::Step(&record, eval.as_ref()))?;
        }
        Ok(())
    }
}

/// Clusters the embeddings of `segments` into as many groups as there are
/// distinct speakers and returns `(nmi, purity)`.
pub(crate) fn score_embeddings<S: Scalar>(
    model: &EncoderModel<S>,
    segments: &[SegmentFeatures<S>],
    seed: u64,
    restarts: usize,
) -> Result<(f64, f64), TrainError> {
    let truth: Vec<&str> = segments.iter().map(|s| s.speaker_id.as_str()).collect();
    let mut speakers = truth.clone();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.len() < 2 {
        return Err(TrainError::DevSet(format!("need at least 2 speakers, found {}", speakers.len())));
    }
    let frames: Vec<&Matrix<S>> = segments.iter().map(|s| &s.frames).collect();
    let embeddings = model.embed_batch(&frames)?;
    let clusters = KMeans::new(speakers.len()).seed(seed).n_init(restarts).fit(&embeddings)?;
    let pair = LabelPair::new(&clusters.assignments, &truth)?;
    Ok((nmi(&pair), purity(&pair)))
}

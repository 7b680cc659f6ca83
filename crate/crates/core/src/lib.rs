//! Speaker diarization with attention-based segment embeddings.
//!
//! Pipeline: [`dsp`] turns audio into MFCC + delta segments, [`encoder`]
//! maps each segment to a fixed-size embedding, [`trainer`] learns the
//! encoder under a triplet ranking loss with in-batch semi-hard mining,
//! [`clustering`] groups embeddings (k-means / x-means) and [`metrics`]
//! scores the result (NMI, purity, DER).
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases at the
//! crate root fix the double-precision types used by the file formats and
//! the command-line tool.

pub mod autodiff;
pub mod checkpoint;
pub mod clustering;
mod codec;
pub mod dsp;
pub mod encoder;
pub mod matrix;
pub mod metrics;
pub mod scalar;
pub mod trainer;

pub use matrix::Matrix;
pub use scalar::Scalar;

/// Double-precision encoder used by the file formats and the CLI.
pub type Encoder = encoder::EncoderModel<f64>;
pub type Segment = dsp::SegmentFeatures<f64>;
pub type Audio = dsp::AudioBuffer<f64>;
pub type FeatureExtractor = dsp::Featurizer<f64>;
pub type TripletTrainer = trainer::Trainer<f64>;
pub type Clustering = clustering::ClusterResult<f64>;

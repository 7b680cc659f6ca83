//! Clustering scores (NMI, purity) and diarization error rate with collar,
//! overlap exclusion and optimal speaker mapping.

mod annotation;
mod der;
mod hungarian;
mod labels;
pub mod rttm;

use thiserror::Error;

pub use annotation::{segments_to_annotation, Annotation, Interval, LabeledSegment};
pub use der::{der, DerBreakdown};
pub use hungarian::max_weight_assignment;
pub use labels::{nmi, purity, LabelPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("label lengths differ: {predicted} predicted vs {truth} truth")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("no labels to score")]
    Empty,
    #[error("invalid interval [{start}, {end}) for speaker {speaker:?}")]
    InvalidInterval { start: f64, end: f64, speaker: String },
    #[error("recording mismatch: reference {reference:?} vs hypothesis {hypothesis:?}")]
    UriMismatch { reference: String, hypothesis: String },
    #[error("empty evaluation timeline: {0}")]
    EmptyTimeline(String),
    #[error("invalid collar {0}")]
    InvalidCollar(f64),
    #[error("rttm line {line}: {message}")]
    Rttm { line: usize, message: String },
}

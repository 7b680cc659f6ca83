//! k-means (k-means++ seeding, Lloyd iterations) and x-means speaker-count
//! estimation.

mod kmeans;
mod xmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use kmeans::{assign, kmeans, kmeans_plus_plus, lloyd, KMeans};
pub use xmeans::{bic, xmeans, XMeans};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("invalid cluster bounds: {0}")]
    InvalidBounds(String),
    #[error("non-finite input coordinates")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<S> {
    /// Cluster index per input row, each in `0..estimated_k`.
    pub assignments: Vec<usize>,
    /// `k x D` centroids.
    pub centroids: Matrix<S>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: S,
    pub estimated_k: usize,
    /// Inertia after every assignment step of the final Lloyd run.
    pub inertia_history: Vec<S>,
}

/// Settings shared by the diarization and evaluation paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub max_iter: usize,
    pub n_init: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { max_iter: 300, n_init: 4, k_min: 2, k_max: 10 }
    }
}

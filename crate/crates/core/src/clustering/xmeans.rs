use std::f64::consts::PI;

use super::kmeans::{lloyd, KMeans};
use super::{ClusterError, ClusterResult};
use crate::matrix::{sq_dist, Matrix};
use crate::scalar::Scalar;

/// Bayesian Information Criterion of a hard clustering under identical
/// spherical Gaussians with a shared variance.
///
/// `log L = Σ_c n_c ln(n_c / n) − (n D / 2) ln(2π σ²) − D (n − k) / 2` with
/// `σ² = SSE / (D (n − k))`, penalized by `(k D + k + 1) / 2 · ln n`.
/// Returns `None` when the variance is not estimable (`n <= k`).
pub fn bic<S: Scalar>(points: &Matrix<S>, assignments: &[usize], centroids: &Matrix<S>) -> Option<f64> {
    let n = points.rows();
    let k = centroids.rows();
    let dim = points.cols() as f64;
    if n <= k || dim == 0.0 {
        return None;
    }
    let mut counts = vec![0usize; k];
    let mut sse = 0.0f64;
    for (p, &c) in points.iter_rows().zip(assignments) {
        counts[c] += 1;
        sse += sq_dist(p, centroids.row(c)).to_f64_lossy();
    }
    let nf = n as f64;
    let dof = dim * (n - k) as f64;
    let variance = (sse / dof).max(f64::MIN_POSITIVE);
    let mixing: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 * (c as f64 / nf).ln()).sum();
    let log_lik = mixing - nf * dim / 2.0 * (2.0 * PI * variance).ln() - dof / 2.0;
    let free = k as f64 * dim + k as f64 + 1.0;
    Some(log_lik - free / 2.0 * nf.ln())
}

/// x-means settings.
#[derive(Debug, Clone)]
pub struct XMeans {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Restarts for the initial k_min clustering and for each trial split.
    pub n_init: usize,
}

impl XMeans {
    pub fn new(k_min: usize, k_max: usize) -> Self {
        Self { k_min, k_max, seed: 0, max_iter: 300, n_init: 4 }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_init(mut self, n_init: usize) -> Self {
        self.n_init = n_init.max(1);
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Starts from `k_min` centroids and keeps accepting 2-way splits whose
    /// BIC beats the parent's until none qualifies or `k_max` is reached,
    /// then refines with Lloyd iterations at the estimated k.
    pub fn fit<S: Scalar>(&self, points: &Matrix<S>) -> Result<ClusterResult<S>, ClusterError> {
        if self.k_min < 2 {
            return Err(ClusterError::InvalidBounds(format!("k_min {} < 2", self.k_min)));
        }
        if self.k_max < self.k_min {
            return Err(ClusterError::InvalidBounds(format!("k_max {} < k_min {}", self.k_max, self.k_min)));
        }
        if points.rows() < self.k_max {
            return Err(ClusterError::TooFewPoints { n: points.rows(), k: self.k_max });
        }
        let mut current = KMeans::new(self.k_min)
            .seed(self.seed)
            .max_iter(self.max_iter)
            .n_init(self.n_init)
            .fit(points)?;
        let mut round = 0u64;
        while current.estimated_k < self.k_max {
            round += 1;
            let k = current.estimated_k;
            let mut splits: Vec<(f64, usize, Matrix<S>)> = Vec::new();
            for c in 0..k {
                let members: Vec<usize> = (0..points.rows()).filter(|&i| current.assignments[i] == c).collect();
                if members.len() < 4 {
                    continue;
                }
                let sub = points.select_rows(&members);
                let parent = Matrix::from_rows(&[current.centroids.row(c)]).expect("one row");
                let Some(parent_bic) = bic(&sub, &vec![0; members.len()], &parent) else { continue };
                let child = KMeans::new(2)
                    .seed(self.seed ^ (round << 32) ^ c as u64)
                    .max_iter(self.max_iter)
                    .n_init(self.n_init)
                    .fit(&sub)?;
                let Some(child_bic) = bic(&sub, &child.assignments, &child.centroids) else { continue };
                if child_bic > parent_bic {
                    splits.push((child_bic - parent_bic, c, child.centroids));
                }
            }
            if splits.is_empty() {
                break;
            }
            splits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            splits.truncate(self.k_max - k);
            let mut rows: Vec<Vec<S>> = Vec::with_capacity(k + splits.len());
            for c in 0..k {
                match splits.iter().find(|s| s.1 == c) {
                    Some((_, _, children)) => rows.extend(children.iter_rows().map(<[S]>::to_vec)),
                    None => rows.push(current.centroids.row(c).to_vec()),
                }
            }
            let centroids = Matrix::from_rows(&rows).expect("uniform width");
            current = lloyd(points, &centroids, self.max_iter);
        }
        Ok(lloyd(points, &current.centroids, self.max_iter))
    }
}

/// x-means with the default restart count.
pub fn xmeans<S: Scalar>(points: &Matrix<S>, k_min: usize, k_max: usize, seed: u64) -> Result<ClusterResult<S>, ClusterError> {
    XMeans::new(k_min, k_max).seed(seed).fit(points)
}

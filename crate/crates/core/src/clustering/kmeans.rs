use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClusterError, ClusterResult};
use crate::matrix::{sq_dist, Matrix};
use crate::scalar::Scalar;

/// Nearest centroid per point (ties go to the lower index) and the total inertia.
pub fn assign<S: Scalar>(points: &Matrix<S>, centroids: &Matrix<S>) -> (Vec<usize>, S) {
    let mut inertia = S::zero();
    let labels = points
        .iter_rows()
        .map(|p| {
            let (best, d) = centroids
                .iter_rows()
                .map(|c| sq_dist(p, c))
                .enumerate()
                .fold((0, S::infinity()), |(bi, bd), (i, d)| if d < bd { (i, d) } else { (bi, bd) });
            inertia = inertia + d;
            best
        })
        .collect();
    (labels, inertia)
}

/// k-means++ seeding: first centre uniform, the rest drawn proportionally to
/// the squared distance from the nearest chosen centre.
pub fn kmeans_plus_plus<S: Scalar, R: Rng>(points: &Matrix<S>, k: usize, rng: &mut R) -> Matrix<S> {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, points.row(chosen[0])).to_f64_lossy()).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if nearest[pick] == 0.0 {
                // rounding ran off the end; take the last point with mass
                pick = nearest.iter().rposition(|&d| d > 0.0).expect("total > 0");
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.iter_rows().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, points.row(next)).to_f64_lossy());
        }
    }
    points.select_rows(&chosen)
}

fn means<S: Scalar>(points: &Matrix<S>, labels: &[usize], k: usize, fallback: &Matrix<S>) -> Matrix<S> {
    let d = points.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums.row_mut(l).iter_mut().zip(p) {
            *s = *s + v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            sums.row_mut(j).copy_from_slice(fallback.row(j));
        } else {
            let inv = S::one() / S::from_usize_lossy(c);
            sums.row_mut(j).iter_mut().for_each(|v| *v = *v * inv);
        }
    }
    sums
}

/// Moves the point farthest from its centroid (taken from a cluster with at
/// least two members) into each empty cluster.
fn repair_empty<S: Scalar>(points: &Matrix<S>, labels: &mut [usize], centroids: &mut Matrix<S>) -> bool {
    let k = centroids.rows();
    let mut repaired = false;
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return repaired };
        let donor = points
            .iter_rows()
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, centroids.row(labels[i]))))
            .fold(None, |best: Option<(usize, S)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((p, _)) = donor else { return repaired };
        labels[p] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(p));
        repaired = true;
    }
}

fn inertia_of<S: Scalar>(points: &Matrix<S>, labels: &[usize], centroids: &Matrix<S>) -> S {
    points.iter_rows().zip(labels).fold(S::zero(), |acc, (p, &l)| acc + sq_dist(p, centroids.row(l)))
}

/// Lloyd iterations from the given centroids until the assignment stops
/// changing or `max_iter` updates have run.
pub fn lloyd<S: Scalar>(points: &Matrix<S>, init: &Matrix<S>, max_iter: usize) -> ClusterResult<S> {
    let k = init.rows();
    let mut centroids = init.clone();
    let (mut labels, _) = assign(points, &centroids);
    repair_empty(points, &mut labels, &mut centroids);
    let mut inertia = inertia_of(points, &labels, &centroids);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        centroids = means(points, &labels, k, &centroids);
        let (mut next, _) = assign(points, &centroids);
        repair_empty(points, &mut next, &mut centroids);
        inertia = inertia_of(points, &next, &centroids);
        history.push(inertia);
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }
    ClusterResult { assignments: labels, centroids, inertia, estimated_k: k, inertia_history: history }
}

/// Configurable k-means with best-of-`n_init` restarts.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub n_init: usize,
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        Self { k, seed: 0, max_iter: 300, n_init: 1 }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn n_init(mut self, n_init: usize) -> Self {
        self.n_init = n_init.max(1);
        self
    }

    pub fn fit<S: Scalar>(&self, points: &Matrix<S>) -> Result<ClusterResult<S>, ClusterError> {
        if self.k == 0 || points.rows() < self.k {
            return Err(ClusterError::TooFewPoints { n: points.rows(), k: self.k });
        }
        if !points.is_finite() {
            return Err(ClusterError::NonFinite);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<ClusterResult<S>> = None;
        for _ in 0..self.n_init {
            let init = kmeans_plus_plus(points, self.k, &mut rng);
            let run = lloyd(points, &init, self.max_iter);
            if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
                best = Some(run);
            }
        }
        Ok(best.expect("n_init >= 1"))
    }
}

/// Single-initialization k-means keyed entirely by `seed`.
pub fn kmeans<S: Scalar>(points: &Matrix<S>, k: usize, seed: u64, max_iter: usize) -> Result<ClusterResult<S>, ClusterError> {
    KMeans::new(k).seed(seed).max_iter(max_iter).fit(points)
}

use std::collections::HashMap;
use std::hash::Hash;

use super::MetricError;

/// Predicted cluster and true class per item, densified to `0..k` in order
/// of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPair {
    predicted: Vec<usize>,
    truth: Vec<usize>,
}

fn densify<T: Hash + Eq + Clone>(labels: &[T]) -> Vec<usize> {
    let mut ids = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.clone()).or_insert(next)
        })
        .collect()
}

impl LabelPair {
    pub fn new<P: Hash + Eq + Clone, T: Hash + Eq + Clone>(predicted: &[P], truth: &[T]) -> Result<Self, MetricError> {
        if predicted.len() != truth.len() {
            return Err(MetricError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
        }
        if predicted.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(Self { predicted: densify(predicted), truth: densify(truth) })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    /// Counts `table[cluster][class]`.
    pub fn contingency(&self) -> Vec<Vec<usize>> {
        let kp = self.predicted.iter().max().map_or(0, |m| m + 1);
        let kt = self.truth.iter().max().map_or(0, |m| m + 1);
        let mut table = vec![vec![0usize; kt]; kp];
        for (&p, &t) in self.predicted.iter().zip(&self.truth) {
            table[p][t] += 1;
        }
        table
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Mutual information over the arithmetic mean of the two label entropies.
/// Two trivial partitions score 1.
pub fn nmi(pairs: &LabelPair) -> f64 {
    let n = pairs.len() as f64;
    let table = pairs.contingency();
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let mean_h = (entropy(rows.into_iter(), n) + entropy(cols.into_iter(), n)) / 2.0;
    if mean_h == 0.0 {
        return 1.0;
    }
    (mi / mean_h).clamp(0.0, 1.0)
}

/// Fraction of items belonging to the majority class of their cluster.
pub fn purity(pairs: &LabelPair) -> f64 {
    let majority: usize = pairs.contingency().iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    majority as f64 / pairs.len() as f64
}

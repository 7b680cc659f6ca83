use crate::matrix::{sq_dist, Matrix};
use crate::scalar::Scalar;

/// Batch positions of an (anchor, positive, negative) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    /// False when no negative fell inside the margin band and the fallback
    /// rule picked this one.
    pub semi_hard: bool,
}

/// `B x B` squared Euclidean distances between embedding rows.
pub fn pairwise_sq_distances<S: Scalar>(embeddings: &Matrix<S>) -> Matrix<S> {
    let n = embeddings.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(embeddings.row(i), embeddings.row(j));
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

/// For every ordered same-speaker pair, the hardest negative inside
/// `D_rp² <= D_rn² <= D_rp² + margin` (smallest `D_rn²`, lowest index on
/// ties); failing that, the closest negative with `D_rn² > D_rp²`; failing
/// that, the pair is skipped. Triples come out in (anchor, positive) order.
pub fn mine_semi_hard<S: Scalar>(distances: &Matrix<S>, labels: &[usize], margin: S) -> Vec<Triple> {
    let n = labels.len();
    assert_eq!(distances.shape(), (n, n), "distance matrix must be square over the labels");
    let mut out = Vec::new();
    for a in 0..n {
        let row = distances.row(a);
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            let dp = row[p];
            let mut band: Option<usize> = None;
            let mut beyond: Option<usize> = None;
            for m in (0..n).filter(|&m| labels[m] != labels[a]) {
                let dn = row[m];
                if dn >= dp && dn <= dp + margin {
                    if band.is_none_or(|b| dn < row[b]) {
                        band = Some(m);
                    }
                } else if dn > dp && beyond.is_none_or(|b| dn < row[b]) {
                    beyond = Some(m);
                }
            }
            let pick = band.map(|m| (m, true)).or(beyond.map(|m| (m, false)));
            if let Some((negative, semi_hard)) = pick {
                out.push(Triple { anchor: a, positive: p, negative, semi_hard });
            }
        }
    }
    out
}

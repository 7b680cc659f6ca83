use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Half-width of the delta regression window.
pub const DELTA_WINDOW: usize = 2;

/// `d_t = Σ_{n=1}^{N} n (c_{t+n} - c_{t-n}) / (2 Σ n²)` with edge frames replicated.
pub fn regression_deltas<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(rows, cols);
    if rows == 0 {
        return out;
    }
    let denom = S::from_usize_lossy(2 * (1..=DELTA_WINDOW).map(|n| n * n).sum::<usize>());
    let last = rows - 1;
    for t in 0..rows {
        for n in 1..=DELTA_WINDOW {
            let fwd = m.row((t + n).min(last));
            let back = m.row(t.saturating_sub(n));
            let w = S::from_usize_lossy(n);
            for ((o, &f), &b) in out.row_mut(t).iter_mut().zip(fwd).zip(back) {
                *o = *o + w * (f - b);
            }
        }
        for o in out.row_mut(t) {
            *o = *o / denom;
        }
    }
    out
}

/// Appends deltas and double-deltas: `T x c` becomes `T x 3c`.
pub fn add_deltas<S: Scalar>(cepstra: &Matrix<S>) -> Matrix<S> {
    let delta = regression_deltas(cepstra);
    let delta2 = regression_deltas(&delta);
    let (rows, c) = cepstra.shape();
    let mut out = Matrix::zeros(rows, 3 * c);
    for t in 0..rows {
        let row = out.row_mut(t);
        row[..c].copy_from_slice(cepstra.row(t));
        row[c..2 * c].copy_from_slice(delta.row(t));
        row[2 * c..].copy_from_slice(delta2.row(t));
    }
    out
}

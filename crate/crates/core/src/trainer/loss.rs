use super::{Triple, TrainError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Mean of `max(0, D_rp² − D_rn² + margin)` over aligned distance vectors.
pub fn hinge_mean<S: Scalar>(tape: &mut Tape<S>, d_rp: Var, d_rn: Var, margin: S) -> Result<Var, TrainError> {
    let count = tape.value(d_rp).len();
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(S::zero())));
    }
    let gap = tape.sub(d_rp, d_rn)?;
    let shifted = tape.add_scalar(gap, margin);
    let hinge = tape.relu(shifted);
    let total = tape.sum(hinge);
    Ok(tape.scale(total, S::one() / S::from_usize_lossy(count)))
}

/// Triplet ranking loss over rows of the `B x D` `embeddings`. An empty
/// triple list yields a constant 0.
pub fn triplet_loss<S: Scalar>(tape: &mut Tape<S>, embeddings: Var, triples: &[Triple], margin: S) -> Result<Var, TrainError> {
    if triples.is_empty() {
        return Ok(tape.constant(Tensor::scalar(S::zero())));
    }
    let pick = |f: fn(&Triple) -> usize| triples.iter().map(f).collect::<Vec<_>>();
    let anchors = tape.gather_rows(embeddings, &pick(|t| t.anchor))?;
    let positives = tape.gather_rows(embeddings, &pick(|t| t.positive))?;
    let negatives = tape.gather_rows(embeddings, &pick(|t| t.negative))?;
    let d_rp = tape.row_sq_dist(anchors, positives)?;
    let d_rn = tape.row_sq_dist(anchors, negatives)?;
    hinge_mean(tape, d_rp, d_rn, margin)
}

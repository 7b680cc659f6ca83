use rayon::prelude::*;

use super::{EncoderError, EncoderModel, PositionalMode};
use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::SegmentFeatures;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Segments per tape when embedding or back-propagating a batch. Fixed so
/// that gradient summation order does not depend on the thread count.
const SEGMENTS_PER_TAPE: usize = 4;

/// Attention weight matrices recorded during a forward pass, `[layer][head]`.
#[derive(Debug, Default)]
pub struct AttentionTrace {
    pub weights: Vec<Vec<Var>>,
}

/// Adds rows `0..T` of the positional table to the `T x D` input embedding.
pub fn positional_encode<S: Scalar>(tape: &mut Tape<S>, embedded: Var, table: Var) -> Result<Var, EncoderError> {
    let frames = tape.shape(embedded)[0];
    let max = tape.shape(table)[0];
    if frames > max {
        return Err(EncoderError::TooManyFrames { frames, max });
    }
    let rows: Vec<usize> = (0..frames).collect();
    let pos = tape.gather_rows(table, &rows)?;
    Ok(tape.add(embedded, pos)?)
}

impl<S: Scalar> EncoderModel<S> {
    /// Records every parameter on `tape` in store order. With `track`, the
    /// trainable ones become gradient-collecting leaves.
    pub fn bind(&self, tape: &mut Tape<S>, track: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone().with_requires_grad(track && p.trainable)))
            .collect()
    }

    fn check_frames(&self, frames: &Matrix<S>) -> Result<(), EncoderError> {
        if frames.cols() != self.config.input_dim {
            return Err(EncoderError::WidthMismatch { expected: self.config.input_dim, got: frames.cols() });
        }
        if frames.rows() == 0 {
            return Err(EncoderError::EmptySegment);
        }
        Ok(())
    }

    /// One attention block: multi-head self-attention and the kernel-1
    /// feed-forward, each wrapped in the configured residual and norm.
    pub fn attention_block(
        &self,
        tape: &mut Tape<S>,
        bound: &[Var],
        layer: usize,
        h: Var,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<Var, EncoderError> {
        let width = tape.shape(h).get(1).copied().unwrap_or(0);
        if width != self.config.hidden_dim {
            return Err(EncoderError::WidthMismatch { expected: self.config.hidden_dim, got: width });
        }
        let lay = &self.layout.layers[layer];
        let scale = S::one() / S::from_usize_lossy(self.config.head_dim()).sqrt();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        let mut weights = Vec::with_capacity(self.config.num_heads);
        for head in 0..self.config.num_heads {
            let q = tape.matmul(h, bound[lay.query[head]])?;
            let k = tape.matmul(h, bound[lay.key[head]])?;
            let v = tape.matmul(h, bound[lay.value[head]])?;
            let kt = tape.transpose(k)?;
            let raw = tape.matmul(q, kt)?;
            let scores = tape.scale(raw, scale);
            let w = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(w, v)?);
            weights.push(w);
        }
        if let Some(t) = trace {
            t.weights.push(weights);
        }
        let concat = tape.concat_cols(&heads)?;
        let attended = tape.conv1d_k1(concat, bound[lay.out_w], bound[lay.out_b])?;
        let x1 = self.residual_norm(tape, h, attended, bound[lay.norm1_gain], bound[lay.norm1_bias])?;
        let inner = tape.conv1d_k1(x1, bound[lay.ff1_w], bound[lay.ff1_b])?;
        let act = tape.relu(inner);
        let ff = tape.conv1d_k1(act, bound[lay.ff2_w], bound[lay.ff2_b])?;
        self.residual_norm(tape, x1, ff, bound[lay.norm2_gain], bound[lay.norm2_bias])
    }

    fn residual_norm(&self, tape: &mut Tape<S>, skip: Var, update: Var, gain: Var, bias: Var) -> Result<Var, EncoderError> {
        let sum = if self.config.residual { tape.add(skip, update)? } else { update };
        if self.config.layer_norm {
            Ok(tape.layer_norm(sum, gain, bias, S::lit(self.config.norm_eps))?)
        } else {
            Ok(sum)
        }
    }

    /// Per-frame representation after the last block, `T x D`.
    pub fn hidden_states(
        &self,
        tape: &mut Tape<S>,
        bound: &[Var],
        frames: &Matrix<S>,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var, EncoderError> {
        self.check_frames(frames)?;
        let x = tape.constant(Tensor::from_matrix(frames));
        let mut h = tape.conv1d_k1(x, bound[self.layout.input_w], bound[self.layout.input_b])?;
        if self.config.positional != PositionalMode::Disabled {
            h = positional_encode(tape, h, bound[self.layout.positional])?;
        } else if frames.rows() > self.config.max_positions {
            return Err(EncoderError::TooManyFrames { frames: frames.rows(), max: self.config.max_positions });
        }
        for layer in 0..self.config.num_layers {
            h = self.attention_block(tape, bound, layer, h, trace.as_deref_mut())?;
        }
        Ok(h)
    }

    /// Temporal average of [`Self::hidden_states`], a `[D]` vector.
    pub fn pooled(&self, tape: &mut Tape<S>, bound: &[Var], frames: &Matrix<S>) -> Result<Var, EncoderError> {
        let h = self.hidden_states(tape, bound, frames, None)?;
        Ok(tape.mean_axis(h, 0)?)
    }

    pub fn embed_frames(&self, frames: &Matrix<S>) -> Result<Vec<S>, EncoderError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let e = self.pooled(&mut tape, &bound, frames)?;
        Ok(tape.value(e).values().to_vec())
    }

    pub fn embed_segment(&self, features: &SegmentFeatures<S>) -> Result<Vec<S>, EncoderError> {
        self.embed_frames(&features.frames)
    }

    /// Embeds equally long segments; row `i` is the embedding of `segments[i]`.
    pub fn embed_batch(&self, segments: &[&Matrix<S>]) -> Result<Matrix<S>, EncoderError> {
        if let Some(first) = segments.first() {
            if let Some(other) = segments.iter().find(|s| s.rows() != first.rows()) {
                return Err(EncoderError::RaggedBatch { first: first.rows(), other: other.rows() });
            }
        }
        let chunks: Vec<Vec<Vec<S>>> = segments
            .par_chunks(SEGMENTS_PER_TAPE)
            .map(|chunk| {
                let mut tape = Tape::new();
                let bound = self.bind(&mut tape, false);
                chunk
                    .iter()
                    .map(|frames| {
                        let e = self.pooled(&mut tape, &bound, frames)?;
                        Ok(tape.value(e).values().to_vec())
                    })
                    .collect::<Result<Vec<_>, EncoderError>>()
            })
            .collect::<Result<_, _>>()?;
        let rows: Vec<Vec<S>> = chunks.into_iter().flatten().collect();
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.config.hidden_dim));
        }
        Ok(Matrix::from_rows(&rows).expect("uniform embedding width"))
    }

    /// Parameter gradients of `Σ_i ⟨upstream_i, embed(segments_i)⟩`.
    ///
    /// With `upstream = ∂loss/∂embeddings` this is the chain rule through the
    /// encoder, evaluated one small tape at a time. Returned buffers align
    /// with [`Self::params`]; frozen parameters get zeros.
    pub fn embedding_gradients(&self, segments: &[&Matrix<S>], upstream: &Matrix<S>) -> Result<Vec<Vec<S>>, EncoderError> {
        assert_eq!(segments.len(), upstream.rows(), "one upstream row per segment");
        let work: Vec<(usize, &Matrix<S>)> = segments
            .iter()
            .enumerate()
            .filter(|(i, _)| upstream.row(*i).iter().any(|v| *v != S::zero()))
            .map(|(i, s)| (i, *s))
            .collect();
        let partials: Vec<Vec<Vec<S>>> = work
            .par_chunks(SEGMENTS_PER_TAPE)
            .map(|chunk| {
                let mut tape = Tape::new();
                let bound = self.bind(&mut tape, true);
                let mut total: Option<Var> = None;
                for &(i, frames) in chunk {
                    let e = self.pooled(&mut tape, &bound, frames)?;
                    let g = tape.constant(Tensor::vector(upstream.row(i).to_vec()));
                    let weighted = tape.mul(e, g)?;
                    let s = tape.sum(weighted);
                    total = Some(match total {
                        Some(t) => tape.add(t, s)?,
                        None => s,
                    });
                }
                if let Some(t) = total {
                    tape.backward(t)?;
                }
                Ok(bound
                    .iter()
                    .zip(self.params.iter())
                    .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![S::zero(); p.tensor.len()], <[S]>::to_vec))
                    .collect())
            })
            .collect::<Result<_, EncoderError>>()?;
        let mut grads = self.params.zeros_like();
        for part in partials {
            for (acc, g) in grads.iter_mut().zip(part) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
            }
        }
        Ok(grads)
    }
}

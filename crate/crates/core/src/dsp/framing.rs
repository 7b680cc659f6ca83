use std::f64::consts::PI;

use super::{AudioBuffer, FeatureError};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Consecutive non-overlapping chunks of `segment_seconds`; a short tail is dropped.
pub fn segment_audio<S: Scalar>(audio: &AudioBuffer<S>, segment_seconds: f64) -> Vec<AudioBuffer<S>> {
    assert!(segment_seconds > 0.0, "segment_seconds must be positive");
    let len = (segment_seconds * f64::from(audio.sample_rate)).round() as usize;
    if len == 0 {
        return Vec::new();
    }
    audio
        .samples
        .chunks_exact(len)
        .map(|c| AudioBuffer::new(c.to_vec(), audio.sample_rate))
        .collect()
}

/// `floor((n - window) / hop) + 1`, or 0 when `n < window`.
pub fn frame_count(n: usize, window: usize, hop: usize) -> usize {
    if n < window || hop == 0 {
        0
    } else {
        (n - window) / hop + 1
    }
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2πn / (W-1))`.
pub fn hamming_window<S: Scalar>(len: usize) -> Vec<S> {
    if len == 1 {
        return vec![S::one()];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|n| S::lit(0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())).collect()
}

/// `y[0] = x[0]`, `y[n] = x[n] - coeff * x[n-1]`.
pub fn pre_emphasize<S: Scalar>(samples: &[S], coeff: S) -> Vec<S> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = S::zero();
    for (i, &x) in samples.iter().enumerate() {
        out.push(if i == 0 { x } else { x - coeff * prev });
        prev = x;
    }
    out
}

/// Splits audio into Hamming-windowed frames, one frame per row.
pub fn frame_signal<S: Scalar>(
    audio: &AudioBuffer<S>,
    window_ms: f64,
    overlap_ms: f64,
) -> Result<Matrix<S>, FeatureError> {
    if !(overlap_ms > 0.0 && window_ms > overlap_ms) {
        return Err(FeatureError::InvalidConfig("require window_ms > overlap_ms > 0".into()));
    }
    let rate = f64::from(audio.sample_rate);
    let window = (window_ms * rate / 1000.0).round() as usize;
    let overlap = (overlap_ms * rate / 1000.0).round() as usize;
    if window <= overlap {
        return Err(FeatureError::InvalidConfig("window and overlap round to the same length".into()));
    }
    let hop = window - overlap;
    let n = audio.samples.len();
    let count = frame_count(n, window, hop);
    if count == 0 {
        return Err(FeatureError::SegmentTooShort { samples: n, window });
    }
    let win: Vec<S> = hamming_window(window);
    let mut frames = Matrix::zeros(count, window);
    for f in 0..count {
        let src = &audio.samples[f * hop..f * hop + window];
        for ((dst, &x), &w) in frames.row_mut(f).iter_mut().zip(src).zip(&win) {
            *dst = x * w;
        }
    }
    Ok(frames)
}

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlannerScalar};

use super::FeatureError;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist,
/// evaluated at the `n_fft / 2 + 1` bin centre frequencies.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Matrix<f64> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Matrix::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * f64::from(sample_rate) / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.set(m, b, w);
        }
    }
    fb
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
fn dct_basis(n_out: usize, n_in: usize) -> Matrix<f64> {
    let mut basis = Matrix::zeros(n_out, n_in);
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            basis.set(k, i, scale * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos());
        }
    }
    basis
}

/// Precomputed MFCC pipeline for a fixed frame length and sample rate.
pub struct MfccExtractor<S: Scalar> {
    frame_len: usize,
    n_fft: usize,
    filterbank: Matrix<S>,
    dct: Matrix<S>,
    log_floor: S,
    fft: Arc<dyn Fft<S>>,
}

impl<S: Scalar> MfccExtractor<S> {
    pub fn new(
        sample_rate: u32,
        frame_len: usize,
        n_mels: usize,
        n_cepstra: usize,
        log_floor: f64,
    ) -> Result<Self, FeatureError> {
        if frame_len == 0 || n_mels == 0 || n_cepstra == 0 || n_cepstra > n_mels {
            return Err(FeatureError::InvalidConfig(format!(
                "mfcc needs frame_len > 0 and 0 < n_cepstra ({n_cepstra}) <= n_mels ({n_mels})"
            )));
        }
        let n_fft = frame_len.next_power_of_two();
        let fft = FftPlannerScalar::new().plan_fft_forward(n_fft);
        Ok(Self {
            frame_len,
            n_fft,
            filterbank: mel_filterbank(n_mels, n_fft, sample_rate).map(S::lit),
            dct: dct_basis(n_cepstra, n_mels).map(S::lit),
            log_floor: S::lit(log_floor),
            fft,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Power spectrum of one frame, zero-padded to `n_fft`.
    pub fn power_spectrum(&self, frame: &[S]) -> Vec<S> {
        let mut buf: Vec<Complex<S>> = frame
            .iter()
            .map(|&re| Complex::new(re, S::zero()))
            .chain(std::iter::repeat(Complex::new(S::zero(), S::zero())))
            .take(self.n_fft)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Log mel-filterbank energies of one frame, floored before the log.
    pub fn log_mel_energies(&self, frame: &[S]) -> Vec<S> {
        let power = self.power_spectrum(frame);
        self.filterbank
            .iter_rows()
            .map(|w| {
                let e = w.iter().zip(&power).fold(S::zero(), |acc, (&w, &p)| acc + w * p);
                e.max(self.log_floor).ln()
            })
            .collect()
    }

    /// `frames` is `T x frame_len`; returns `T x n_cepstra`.
    pub fn compute(&self, frames: &Matrix<S>) -> Matrix<S> {
        assert_eq!(frames.cols(), self.frame_len, "frame length does not match extractor");
        let mut out = Matrix::zeros(frames.rows(), self.dct.rows());
        for (t, frame) in frames.iter_rows().enumerate() {
            let logmel = self.log_mel_energies(frame);
            for (k, basis) in self.dct.iter_rows().enumerate() {
                let c = basis.iter().zip(&logmel).fold(S::zero(), |acc, (&b, &l)| acc + b * l);
                out.set(t, k, c);
            }
        }
        out
    }
}

/// MFCCs of already-windowed frames.
pub fn mfcc<S: Scalar>(
    frames: &Matrix<S>,
    sample_rate: u32,
    n_mels: usize,
    n_cepstra: usize,
    log_floor: f64,
) -> Result<Matrix<S>, FeatureError> {
    Ok(MfccExtractor::new(sample_rate, frames.cols(), n_mels, n_cepstra, log_floor)?.compute(frames))
}

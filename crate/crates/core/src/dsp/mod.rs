//! Audio front end: fixed-length segmentation and MFCC + delta features.
//!
//! ```text
//! audio ─▶ segment_audio ─▶ pre-emphasis ─▶ frame_signal ─▶ mfcc ─▶ add_deltas ─▶ T×3c
//! ```
//!
//! Every stage is a pure function of its inputs.

mod cache;
mod deltas;
mod framing;
mod mfcc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_CACHE_MAGIC};
pub use deltas::{add_deltas, regression_deltas, DELTA_WINDOW};
pub use framing::{frame_count, frame_signal, hamming_window, pre_emphasize, segment_audio};
pub use mfcc::{hz_to_mel, mel_filterbank, mel_to_hz, mfcc, MfccExtractor};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("segment too short: {samples} samples, need at least {window} for one frame")]
    SegmentTooShort { samples: usize, window: usize },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite feature value in frame {frame}")]
    NonFinite { frame: usize },
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Single-channel audio, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer<S> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
}

impl<S: Scalar> AudioBuffer<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Feature matrix of one speech segment with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures<S> {
    /// `T x d` frames, `d = 3 * n_cepstra`.
    pub frames: Matrix<S>,
    pub segment_start: f64,
    pub segment_duration: f64,
    pub speaker_id: String,
    pub recording_id: String,
}

impl<S: Scalar> SegmentFeatures<S> {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub segment_seconds: f64,
    pub window_ms: f64,
    pub overlap_ms: f64,
    pub pre_emphasis: f64,
    pub n_mels: usize,
    pub n_cepstra: usize,
    pub log_floor: f64,
    /// Subtract the per-segment mean of each cepstral coefficient.
    pub cepstral_mean_norm: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            segment_seconds: 2.0,
            window_ms: 25.0,
            overlap_ms: 15.0,
            pre_emphasis: 0.97,
            n_mels: 24,
            n_cepstra: 20,
            log_floor: 1e-10,
            cepstral_mean_norm: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive");
        }
        if !(self.overlap_ms > 0.0 && self.window_ms > self.overlap_ms) {
            return bad("require window_ms > overlap_ms > 0");
        }
        if self.n_cepstra == 0 || self.n_cepstra > self.n_mels {
            return bad("require 0 < n_cepstra <= n_mels");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if self.window_samples() <= self.overlap_samples() || self.overlap_samples() == 0 {
            return bad("window/overlap round to an empty hop at this sample rate");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn overlap_samples(&self) -> usize {
        (self.overlap_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        self.window_samples() - self.overlap_samples()
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * f64::from(self.sample_rate)).round() as usize
    }

    /// Frame count of every full segment under this configuration.
    pub fn frames_per_segment(&self) -> usize {
        frame_count(self.segment_samples(), self.window_samples(), self.hop_samples())
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.n_cepstra
    }
}

/// Labels attached to every segment cut from one audio region.
#[derive(Debug, Clone, Default)]
pub struct SegmentLabels {
    pub recording_id: String,
    pub speaker_id: String,
    /// Absolute start time of the buffer within its recording, seconds.
    pub offset_seconds: f64,
}

/// Feature extractor bound to one configuration and sample rate.
pub struct Featurizer<S: Scalar> {
    config: FeatureConfig,
    mfcc: MfccExtractor<S>,
}

impl<S: Scalar> Featurizer<S> {
    pub fn new(config: FeatureConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let mfcc = MfccExtractor::new(
            config.sample_rate,
            config.window_samples(),
            config.n_mels,
            config.n_cepstra,
            config.log_floor,
        )?;
        Ok(Self { config, mfcc })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Features of one segment-length buffer: pre-emphasis, framing, MFCC, deltas.
    pub fn segment_features(&self, segment: &AudioBuffer<S>) -> Result<Matrix<S>, FeatureError> {
        let emphasized = AudioBuffer::new(
            pre_emphasize(&segment.samples, S::lit(self.config.pre_emphasis)),
            segment.sample_rate,
        );
        let frames = frame_signal(&emphasized, self.config.window_ms, self.config.overlap_ms)?;
        let mut cepstra = self.mfcc.compute(&frames);
        if self.config.cepstral_mean_norm {
            subtract_column_means(&mut cepstra);
        }
        let feats = add_deltas(&cepstra);
        if let Some(frame) = feats.iter_rows().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(FeatureError::NonFinite { frame });
        }
        Ok(feats)
    }

    /// Cuts `audio` into segments and featurizes each one.
    pub fn featurize(
        &self,
        audio: &AudioBuffer<S>,
        labels: &SegmentLabels,
    ) -> Result<Vec<SegmentFeatures<S>>, FeatureError> {
        if audio.sample_rate != self.config.sample_rate {
            return Err(FeatureError::InvalidConfig(format!(
                "audio sample rate {} differs from configured {}",
                audio.sample_rate, self.config.sample_rate
            )));
        }
        let segments = segment_audio(audio, self.config.segment_seconds);
        let seg_len = self.config.segment_samples();
        let rate = f64::from(audio.sample_rate);
        segments
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                Ok(SegmentFeatures {
                    frames: self.segment_features(seg)?,
                    segment_start: labels.offset_seconds + (i * seg_len) as f64 / rate,
                    segment_duration: seg_len as f64 / rate,
                    speaker_id: labels.speaker_id.clone(),
                    recording_id: labels.recording_id.clone(),
                })
            })
            .collect()
    }
}

/// One-shot featurization of a recording with the given configuration.
pub fn featurize_recording<S: Scalar>(
    audio: &AudioBuffer<S>,
    config: &FeatureConfig,
    labels: &SegmentLabels,
) -> Result<Vec<SegmentFeatures<S>>, FeatureError> {
    Featurizer::new(config.clone())?.featurize(audio, labels)
}

fn subtract_column_means<S: Scalar>(m: &mut Matrix<S>) {
    let (rows, cols) = m.shape();
    if rows == 0 {
        return;
    }
    let n = S::from_usize_lossy(rows);
    for j in 0..cols {
        let mean = (0..rows).map(|i| m.get(i, j)).sum::<S>() / n;
        for i in 0..rows {
            let v = m.get(i, j) - mean;
            m.set(i, j, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(seconds: f64, freq: f64, rate: u32) -> AudioBuffer<f64> {
        let n = (seconds * f64::from(rate)) as usize;
        let samples = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin())
            .collect();
        AudioBuffer::new(samples, rate)
    }

    #[test]
    fn default_geometry_is_198_by_60() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.window_samples(), 200);
        assert_eq!(cfg.hop_samples(), 80);
        assert_eq!(cfg.frames_per_segment(), 198);
        assert_eq!(cfg.feature_dim(), 60);
    }

    #[test]
    fn ten_seconds_yields_five_segments() {
        let labels = SegmentLabels { recording_id: "rec".into(), speaker_id: "spk".into(), offset_seconds: 3.0 };
        let segs = featurize_recording(&tone(10.0, 440.0, 8000), &FeatureConfig::default(), &labels).unwrap();
        assert_eq!(segs.len(), 5);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.frames.shape(), (198, 60));
            assert!(s.frames.is_finite());
            assert_eq!(s.segment_start, 3.0 + 2.0 * i as f64);
            assert_eq!(s.segment_duration, 2.0);
            assert_eq!(s.speaker_id, "spk");
        }
    }

    #[test]
    fn empty_audio_gives_no_segments() {
        let audio = AudioBuffer::<f64>::new(vec![], 8000);
        let segs = featurize_recording(&audio, &FeatureConfig::default(), &SegmentLabels::default()).unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let err = featurize_recording(&tone(2.0, 100.0, 16000), &FeatureConfig::default(), &SegmentLabels::default());
        assert!(matches!(err, Err(FeatureError::InvalidConfig(_))));
    }

    #[test]
    fn featurization_is_deterministic_and_uniform() {
        let cfg = FeatureConfig::default();
        let f = Featurizer::<f64>::new(cfg).unwrap();
        let a = f.featurize(&tone(4.0, 300.0, 8000), &SegmentLabels::default()).unwrap();
        let b = f.featurize(&tone(4.0, 300.0, 8000), &SegmentLabels::default()).unwrap();
        let c = f.featurize(&tone(6.5, 900.0, 8000), &SegmentLabels::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().chain(&c).all(|s| s.num_frames() == 198));
    }

    #[test]
    fn amplitude_scaling_shifts_only_c0() {
        let f = Featurizer::<f64>::new(FeatureConfig::default()).unwrap();
        let base = tone(2.0, 700.0, 8000);
        let scaled = AudioBuffer::new(base.samples.iter().map(|v| v * 0.25).collect(), 8000);
        let a = f.segment_features(&base).unwrap();
        let b = f.segment_features(&scaled).unwrap();
        let shift = 2.0 * 0.25f64.ln() * (24.0f64).sqrt();
        for t in 0..a.rows() {
            assert!((b.get(t, 0) - a.get(t, 0) - shift).abs() < 1e-8);
            for j in 1..60 {
                assert!((b.get(t, j) - a.get(t, j)).abs() < 1e-8, "frame {t} col {j}");
            }
        }
    }

    #[test]
    fn mean_norm_flag_centres_statics() {
        let cfg = FeatureConfig { cepstral_mean_norm: true, ..FeatureConfig::default() };
        let f = Featurizer::<f64>::new(cfg).unwrap();
        let m = f.segment_features(&tone(2.0, 500.0, 8000)).unwrap();
        for j in 0..20 {
            let mean: f64 = (0..m.rows()).map(|i| m.get(i, j)).sum::<f64>() / m.rows() as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig { overlap_ms: 30.0, ..FeatureConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = FeatureConfig { n_cepstra: 30, ..FeatureConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(FeatureConfig::default().validate().is_ok());
    }
}

//! Synthetic multi-speaker corpora: each speaker is a fixed harmonic source
//! shaped by three resonance peaks, plus white noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use diarize_core::metrics::{rttm, Annotation};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{Manifest, ManifestEntry};
use crate::wav::write_wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub speakers: usize,
    pub segments_per_speaker: usize,
    pub segment_seconds: f64,
    pub sample_rate: u32,
    pub noise: f64,
    /// Multi-speaker recordings written alongside the per-speaker files.
    pub conversations: usize,
    pub turns_per_conversation: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            speakers: 8,
            segments_per_speaker: 40,
            segment_seconds: 2.0,
            sample_rate: 8000,
            noise: 0.02,
            conversations: 0,
            turns_per_conversation: 6,
            seed: 0,
        }
    }
}

/// Resonance peak: centre and width in Hz, relative gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formant {
    pub center: f64,
    pub width: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0: f64,
    pub formants: [Formant; 3],
}

impl SpeakerProfile {
    fn envelope(&self, freq: f64) -> f64 {
        self.formants.iter().map(|f| f.gain * (-0.5 * ((freq - f.center) / f.width).powi(2)).exp()).sum::<f64>() + 0.02
    }

    /// Strongest harmonic of the source under the resonance envelope.
    pub fn dominant_frequency(&self, nyquist: f64) -> f64 {
        let harmonics = (1..).map(|h| h as f64 * self.f0).take_while(|&f| f < nyquist * 0.95);
        harmonics.fold((0.0, f64::MIN), |best, f| if self.envelope(f) > best.1 { (f, self.envelope(f)) } else { best }).0
    }

    /// One utterance. Pitch, resonance positions and gains, and loudness vary
    /// per call; harmonic phases are random; white noise is added.
    pub fn render<R: Rng>(&self, seconds: f64, sample_rate: u32, noise: f64, rng: &mut R) -> Vec<f64> {
        let rate = f64::from(sample_rate);
        let n = (seconds * rate).round() as usize;
        let pitch = rng.random_range(0.97..1.03);
        let mut variant = self.clone();
        variant.f0 *= pitch;
        for f in &mut variant.formants {
            f.center *= pitch * rng.random_range(0.97..1.03);
            f.gain *= rng.random_range(0.7..1.3);
        }
        let loudness = rng.random_range(0.2..0.6);
        let drift = rng.random_range(-0.02..0.02);
        let nyquist = rate / 2.0;
        let partials: Vec<(f64, f64, f64)> = (1..)
            .map(|h| h as f64 * variant.f0)
            .take_while(|&f| f < nyquist * 0.95)
            .map(|f| (f, variant.envelope(f), rng.random_range(0.0..TAU)))
            .collect();
        let norm: f64 = partials.iter().map(|p| p.1).sum();
        let hiss = Normal::new(0.0, noise.max(0.0)).expect("finite noise level");
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                // slow linear pitch glide over the utterance
                let warp = t * (1.0 + drift * t / seconds);
                let voiced: f64 = partials.iter().map(|&(f, a, ph)| a * (TAU * f * warp + ph).sin()).sum();
                loudness * voiced / norm + hiss.sample(rng)
            })
            .collect()
    }
}

/// Speaker profiles with pairwise dominant frequencies at least 40 Hz apart
/// where the draw allows it.
pub fn speaker_profiles(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<SpeakerProfile> {
    let n = spec.speakers;
    let nyquist = f64::from(spec.sample_rate) / 2.0;
    let mut pitches: Vec<f64> = (0..n).map(|i| 95.0 + 150.0 * i as f64 / (n.max(2) - 1) as f64).collect();
    pitches.shuffle(rng);
    let mut out: Vec<SpeakerProfile> = Vec::with_capacity(n);
    for (i, f0) in pitches.into_iter().enumerate() {
        let mut best: Option<(f64, SpeakerProfile)> = None;
        for _ in 0..64 {
            let harmonic = rng.random_range(2..=6) as f64;
            let profile = SpeakerProfile {
                id: format!("spk{i:02}"),
                f0,
                formants: [
                    Formant { center: harmonic * f0, width: rng.random_range(40.0..70.0), gain: 1.0 },
                    Formant { center: rng.random_range(1200.0..2400.0), width: rng.random_range(80.0..160.0), gain: rng.random_range(0.3..0.6) },
                    Formant { center: rng.random_range(2500.0..3500.0), width: rng.random_range(100.0..200.0), gain: rng.random_range(0.1..0.3) },
                ],
            };
            let dom = profile.dominant_frequency(nyquist);
            let gap = out.iter().map(|p| (p.dominant_frequency(nyquist) - dom).abs()).fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|b| gap > b.0) {
                best = Some((gap, profile));
            }
            if gap >= 40.0 {
                break;
            }
        }
        out.push(best.expect("at least one draw").1);
    }
    out
}

/// Paths written by [`synthesize`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub conversations: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub profiles: Vec<SpeakerProfile>,
}

/// Writes `audio/<speaker>.wav` with consecutive labeled regions, a
/// `manifest.jsonl` over them and, when requested, `audio/conv<k>.wav`
/// recordings with `conversations.jsonl` and `reference.rttm`.
pub fn synthesize(spec: &SynthSpec, out: &Path) -> Result<SynthOutput, CliError> {
    if spec.speakers == 0 || spec.segments_per_speaker == 0 || !(spec.segment_seconds > 0.0) {
        return Err(CliError::Usage("synth needs at least one speaker, one segment and a positive segment length".into()));
    }
    if spec.conversations > 0 && spec.speakers < 2 {
        return Err(CliError::Usage("conversations need at least two speakers".into()));
    }
    let audio_dir = out.join("audio");
    fs::create_dir_all(&audio_dir).map_err(CliError::io(format!("creating {}", audio_dir.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let profiles = speaker_profiles(spec, &mut rng);
    let mut manifest = Manifest::default();
    for p in &profiles {
        let mut samples = Vec::new();
        for k in 0..spec.segments_per_speaker {
            samples.extend(p.render(spec.segment_seconds, spec.sample_rate, spec.noise, &mut rng));
            manifest.entries.push(ManifestEntry {
                audio: PathBuf::from(format!("audio/{}.wav", p.id)),
                recording_id: p.id.clone(),
                speaker_id: Some(p.id.clone()),
                start: Some(k as f64 * spec.segment_seconds),
                end: Some((k + 1) as f64 * spec.segment_seconds),
            });
        }
        write_wav(&audio_dir.join(format!("{}.wav", p.id)), &samples, spec.sample_rate)?;
    }
    let manifest_path = out.join("manifest.jsonl");
    fs::write(&manifest_path, manifest.to_jsonl()).map_err(CliError::io("writing manifest"))?;

    let (mut conversations, mut reference) = (None, None);
    if spec.conversations > 0 {
        let mut conv_manifest = Manifest::default();
        let mut annotations = Vec::new();
        for c in 0..spec.conversations {
            let id = format!("conv{c:02}");
            let cast_size = rng.random_range(2..=spec.speakers.min(4));
            let cast: Vec<usize> = rand::seq::index::sample(&mut rng, spec.speakers, cast_size).into_vec();
            let mut samples = Vec::new();
            let mut annotation = Annotation::new(&id);
            let mut previous = None;
            let mut t = 0.0;
            for turn in 0..spec.turns_per_conversation.max(cast_size) {
                // every cast member speaks at least once, then random non-repeating turns
                let who = if turn < cast_size {
                    cast[turn]
                } else {
                    let choices: Vec<usize> = cast.iter().copied().filter(|&s| Some(s) != previous).collect();
                    choices[rng.random_range(0..choices.len())]
                };
                let length = rng.random_range(1..=3) as f64 * spec.segment_seconds;
                samples.extend(profiles[who].render(length, spec.sample_rate, spec.noise, &mut rng));
                annotation.push(t, t + length, profiles[who].id.clone()).expect("positive turn");
                t += length;
                previous = Some(who);
            }
            write_wav(&audio_dir.join(format!("{id}.wav")), &samples, spec.sample_rate)?;
            conv_manifest.entries.push(ManifestEntry {
                audio: PathBuf::from(format!("audio/{id}.wav")),
                recording_id: id,
                speaker_id: None,
                start: None,
                end: None,
            });
            annotations.push(annotation);
        }
        let conv_path = out.join("conversations.jsonl");
        fs::write(&conv_path, conv_manifest.to_jsonl()).map_err(CliError::io("writing conversation manifest"))?;
        let ref_path = out.join("reference.rttm");
        fs::write(&ref_path, rttm::to_string(&annotations)).map_err(CliError::io("writing reference rttm"))?;
        conversations = Some(conv_path);
        reference = Some(ref_path);
    }
    Ok(SynthOutput { manifest: manifest_path, conversations, reference, profiles })
}

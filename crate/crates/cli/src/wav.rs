//! 16-bit PCM mono WAV input and output.

use std::path::Path;

use diarize_core::Audio;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::CliError;

/// Reads a PCM16 mono file at `expected_rate`, scaling samples to [-1, 1).
/// Other formats and rates are rejected, never converted.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Audio, CliError> {
    let fail = |message: String| CliError::Audio { path: path.into(), message };
    let reader = WavReader::open(path).map_err(|e| fail(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(fail(format!(
            "need 16-bit PCM mono, found {} channel(s) of {}-bit {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(fail(format!("sample rate {} Hz, expected {} Hz", spec.sample_rate, expected_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(e.to_string()))?;
    Ok(Audio::new(samples, spec.sample_rate))
}

/// Writes samples in [-1, 1] as PCM16 mono, clipping out-of-range values.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), CliError> {
    let fail = |e: hound::Error| CliError::Audio { path: path.into(), message: e.to_string() };
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut writer = WavWriter::create(path, spec).map_err(fail)?;
    for &s in samples {
        let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(fail)?;
    }
    writer.finalize().map_err(fail)
}

//! Manifest entries to feature segments, in manifest order.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use diarize_core::dsp::{read_feature_cache, write_feature_cache, FeatureConfig, SegmentLabels};
use diarize_core::{Audio, FeatureExtractor, Matrix, Segment};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{Manifest, ManifestEntry};
use crate::wav::read_wav;

/// Cut `[start, end)` out of `audio`; a missing bound means the file edge.
fn region(audio: &Audio, entry: &ManifestEntry) -> Result<Audio, CliError> {
    let rate = f64::from(audio.sample_rate);
    let to_index = |t: f64| ((t * rate).round() as usize).min(audio.len());
    let (a, b) = (to_index(entry.start.unwrap_or(0.0)), entry.end.map_or(audio.len(), to_index));
    if entry.end.is_some_and(|e| (e * rate).round() as usize > audio.len()) {
        return Err(CliError::Audio {
            path: entry.audio.clone(),
            message: format!("region end {} s lies past the end of the audio ({:.3} s)", entry.end.unwrap_or(0.0), audio.duration_seconds()),
        });
    }
    Ok(Audio::new(audio.samples[a..b.max(a)].to_vec(), audio.sample_rate))
}

/// Features of every full segment of every entry. Unlabeled entries get an
/// empty speaker id. Audio files are decoded once each, in parallel.
pub fn featurize_manifest(manifest: &Manifest, config: &FeatureConfig) -> Result<Vec<Segment>, CliError> {
    let featurizer = FeatureExtractor::new(config.clone())?;
    let mut paths: Vec<&PathBuf> = manifest.entries.iter().map(|e| &e.audio).collect();
    paths.sort();
    paths.dedup();
    let decoded: HashMap<&PathBuf, Audio> = paths
        .par_iter()
        .map(|p| read_wav(p, config.sample_rate).map(|a| (*p, a)))
        .collect::<Result<_, _>>()?;
    let per_entry: Vec<Vec<Segment>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let audio = region(&decoded[&e.audio], e)?;
            let labels = SegmentLabels {
                recording_id: e.recording_id.clone(),
                speaker_id: e.speaker_id.clone().unwrap_or_default(),
                offset_seconds: e.start.unwrap_or(0.0),
            };
            Ok(featurizer.featurize(&audio, &labels)?)
        })
        .collect::<Result<_, CliError>>()?;
    Ok(per_entry.into_iter().flatten().collect())
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CacheKey {
    features: FeatureConfig,
    entries: Vec<ManifestEntry>,
}

/// [`featurize_manifest`] through a directory of `DKF1` files, one per
/// segment, plus `features.json` describing what they were computed from.
/// A stale or unreadable cache is rebuilt.
pub fn featurize_cached(manifest: &Manifest, config: &FeatureConfig, dir: &Path) -> Result<Vec<Segment>, CliError> {
    let key = CacheKey { features: config.clone(), entries: manifest.entries.clone() };
    let key_path = dir.join("features.json");
    let segment_path = |i: usize| dir.join(format!("segment-{i:06}.dkf"));
    let fresh = fs::read_to_string(&key_path).ok().and_then(|t| serde_json::from_str::<CacheKey>(&t).ok()).is_some_and(|k| k == key);
    if fresh {
        if let Ok(segments) = load_cache(config, dir, segment_path) {
            log::info!("loaded {} cached segments from {}", segments.len(), dir.display());
            return Ok(segments);
        }
        log::warn!("feature cache {} unreadable, rebuilding", dir.display());
    }
    let segments = featurize_manifest(manifest, config)?;
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    segments.par_iter().enumerate().try_for_each(|(i, s)| -> Result<(), CliError> {
        let path = segment_path(i);
        let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(format!("writing {}", path.display())))?);
        write_feature_cache(&mut w, &s.frames)?;
        Ok(())
    })?;
    let index: Vec<SegmentMeta> = segments.iter().map(SegmentMeta::of).collect();
    fs::write(dir.join("segments.json"), serde_json::to_string(&index).expect("index serializes"))
        .map_err(CliError::io("writing feature cache index"))?;
    fs::write(&key_path, serde_json::to_string_pretty(&key).expect("key serializes")).map_err(CliError::io("writing feature cache key"))?;
    Ok(segments)
}

#[derive(Serialize, Deserialize)]
struct SegmentMeta {
    recording_id: String,
    speaker_id: String,
    start: f64,
    duration: f64,
}

impl SegmentMeta {
    fn of(s: &Segment) -> Self {
        Self { recording_id: s.recording_id.clone(), speaker_id: s.speaker_id.clone(), start: s.segment_start, duration: s.segment_duration }
    }
}

fn load_cache(
    config: &FeatureConfig,
    dir: &Path,
    segment_path: impl Fn(usize) -> PathBuf + Sync,
) -> Result<Vec<Segment>, CliError> {
    let text = fs::read_to_string(dir.join("segments.json")).map_err(CliError::io("reading feature cache index"))?;
    let index: Vec<SegmentMeta> = serde_json::from_str(&text).map_err(|e| CliError::Data(e.to_string()))?;
    index
        .into_par_iter()
        .enumerate()
        .map(|(i, m)| {
            let path = segment_path(i);
            let mut r = BufReader::new(File::open(&path).map_err(CliError::io(format!("reading {}", path.display())))?);
            let frames: Matrix<f64> = read_feature_cache(&mut r)?;
            if frames.cols() != config.feature_dim() {
                return Err(CliError::Data(format!("{}: width {} != {}", path.display(), frames.cols(), config.feature_dim())));
            }
            Ok(Segment { frames, segment_start: m.start, segment_duration: m.duration, speaker_id: m.speaker_id, recording_id: m.recording_id })
        })
        .collect()
}

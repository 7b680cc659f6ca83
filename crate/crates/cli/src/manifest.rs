//! JSON-lines dataset manifests: one
//! `{"audio", "recording_id", "speaker_id"?, "start"?, "end"?}` object per line.
//! Relative audio paths resolve against the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub recording_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    /// Region start in seconds; the whole file when both bounds are absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(format!("reading manifest {}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut manifest = Self::parse(&text).map_err(|(line, message)| CliError::Manifest { path: path.into(), line, message })?;
        for e in &mut manifest.entries {
            if e.audio.is_relative() {
                e.audio = base.join(&e.audio);
            }
        }
        Ok(manifest)
    }

    /// Parses and validates manifest text; errors carry a 1-based line number.
    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
            entry.check().map_err(|m| (i + 1, m))?;
            entries.push(entry);
            lines.push(i + 1);
        }
        let manifest = Self { entries };
        manifest.check_consistency(&lines)?;
        Ok(manifest)
    }

    fn check_consistency(&self, lines: &[usize]) -> Result<(), (usize, String)> {
        let mut audio_of: HashMap<&str, &Path> = HashMap::new();
        let mut recording_of: HashMap<&Path, &str> = HashMap::new();
        for (e, &line) in self.entries.iter().zip(lines) {
            if let Some(prev) = audio_of.insert(&e.recording_id, &e.audio) {
                if prev != e.audio {
                    return Err((line, format!("recording {:?} refers to two audio files", e.recording_id)));
                }
            }
            if let Some(prev) = recording_of.insert(&e.audio, &e.recording_id) {
                if prev != e.recording_id {
                    return Err((line, format!("audio {} carries two recording ids", e.audio.display())));
                }
            }
        }
        let mut by_recording: HashMap<&str, Vec<(f64, f64, usize)>> = HashMap::new();
        for (e, &line) in self.entries.iter().zip(lines) {
            let (s, end) = (e.start.unwrap_or(0.0), e.end.unwrap_or(f64::INFINITY));
            by_recording.entry(&e.recording_id).or_default().push((s, end, line));
        }
        for regions in by_recording.values_mut() {
            regions.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = regions.windows(2).find(|w| w[1].0 < w[0].1) {
                return Err((w[1].2.max(w[0].2), "region overlaps another region of the same recording".into()));
            }
        }
        Ok(())
    }

    /// Fails unless every entry names a speaker.
    pub fn require_speakers(&self, path: &Path) -> Result<(), CliError> {
        match self.entries.iter().position(|e| e.speaker_id.is_none()) {
            Some(i) => Err(CliError::Manifest { path: path.into(), line: i + 1, message: "training entries need a speaker_id".into() }),
            None => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect()
    }
}

impl ManifestEntry {
    fn check(&self) -> Result<(), String> {
        if self.recording_id.is_empty() {
            return Err("empty recording_id".into());
        }
        if self.speaker_id.as_deref() == Some("") {
            return Err("empty speaker_id".into());
        }
        if let Some(s) = self.start {
            if !(s.is_finite() && s >= 0.0) {
                return Err(format!("invalid start {s}"));
            }
        }
        if let Some(e) = self.end {
            if !(e.is_finite() && e > self.start.unwrap_or(0.0)) {
                return Err(format!("invalid end {e}"));
            }
        }
        Ok(())
    }
}

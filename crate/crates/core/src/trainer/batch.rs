use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Triple, TrainError};

/// Batch geometry and triplet margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub speakers_per_batch: usize,
    pub margin: f64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { batch_size: 256, speakers_per_batch: 64, margin: 0.8 }
    }
}

impl BatchSpec {
    pub fn new(batch_size: usize, speakers_per_batch: usize, margin: f64) -> Result<Self, TrainError> {
        let spec = Self { batch_size, speakers_per_batch, margin };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BatchSpec(m));
        if self.speakers_per_batch == 0 || self.batch_size % self.speakers_per_batch != 0 {
            return bad(format!("M={} does not divide B={}", self.speakers_per_batch, self.batch_size));
        }
        if self.per_speaker() < 2 {
            return bad(format!("B/M = {} leaves no positive pair", self.per_speaker()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be positive", self.margin));
        }
        Ok(())
    }

    pub fn per_speaker(&self) -> usize {
        self.batch_size.checked_div(self.speakers_per_batch).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerSegments {
    pub speaker: String,
    /// Positions in the training set.
    pub segments: Vec<usize>,
}

/// Training segments grouped by speaker, sorted by speaker id. Speakers with
/// fewer than the threshold number of segments are left out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    speakers: Vec<SpeakerSegments>,
    excluded: Vec<String>,
}

impl DatasetIndex {
    pub fn new<'a>(speaker_ids: impl IntoIterator<Item = &'a str>, min_segments: usize) -> Self {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in speaker_ids.into_iter().enumerate() {
            groups.entry(id).or_default().push(i);
        }
        let mut speakers = Vec::new();
        let mut excluded = Vec::new();
        for (id, segments) in groups {
            if segments.len() >= min_segments {
                speakers.push(SpeakerSegments { speaker: id.to_string(), segments });
            } else {
                excluded.push(id.to_string());
            }
        }
        Self { speakers, excluded }
    }

    pub fn speakers(&self) -> &[SpeakerSegments] {
        &self.speakers
    }

    /// Speakers dropped by the minimum-segment threshold.
    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn num_segments(&self) -> usize {
        self.speakers.iter().map(|s| s.segments.len()).sum()
    }

    /// Number of speakers that could contribute `per_speaker` segments.
    pub fn eligible(&self, per_speaker: usize) -> usize {
        self.speakers.iter().filter(|s| s.segments.len() >= per_speaker).count()
    }
}

/// `M` speakers with `B / M` segments each, all drawn without replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    /// Positions in the training set, grouped by speaker.
    pub segments: Vec<usize>,
    /// Speaker ordinal (index into [`DatasetIndex::speakers`]) per segment.
    pub labels: Vec<usize>,
    pub triples: Vec<Triple>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Samples `M` speakers, then `B / M` segments of each (unmined).
pub fn sample_batch<R: Rng>(index: &DatasetIndex, spec: &BatchSpec, rng: &mut R) -> Result<TripletBatch, TrainError> {
    spec.validate()?;
    let per = spec.per_speaker();
    let eligible: Vec<&SpeakerSegments> = index.speakers.iter().filter(|s| s.segments.len() >= per).collect();
    if eligible.len() < spec.speakers_per_batch {
        return Err(TrainError::InsufficientSpeakers {
            needed: spec.speakers_per_batch,
            per_speaker: per,
            found: eligible.len(),
        });
    }
    let mut segments = Vec::with_capacity(spec.batch_size);
    let mut labels = Vec::with_capacity(spec.batch_size);
    for pick in sample(rng, eligible.len(), spec.speakers_per_batch) {
        let speaker = eligible[pick];
        let ordinal = index.speakers.iter().position(|s| s.speaker == speaker.speaker).expect("eligible speaker is indexed");
        for j in sample(rng, speaker.segments.len(), per) {
            segments.push(speaker.segments[j]);
            labels.push(ordinal);
        }
    }
    Ok(TripletBatch { segments, labels, triples: Vec::new() })
}

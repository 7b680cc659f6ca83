use serde::{Deserialize, Serialize};

use super::MetricError;

/// Half-open speaker turn `[start, end)` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub speaker: String,
}

/// Speaker turns of one recording.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotation {
    pub uri: String,
    intervals: Vec<Interval>,
}

impl Annotation {
    pub fn new(uri: impl Into<String>) -> Self {
        Self { uri: uri.into(), intervals: Vec::new() }
    }

    pub fn push(&mut self, start: f64, end: f64, speaker: impl Into<String>) -> Result<(), MetricError> {
        let speaker = speaker.into();
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(MetricError::InvalidInterval { start, end, speaker });
        }
        self.intervals.push(Interval { start, end, speaker });
        Ok(())
    }

    pub fn with(mut self, start: f64, end: f64, speaker: impl Into<String>) -> Result<Self, MetricError> {
        self.push(start, end, speaker)?;
        Ok(self)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Distinct speaker labels in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for iv in &self.intervals {
            if !out.contains(&iv.speaker.as_str()) {
                out.push(&iv.speaker);
            }
        }
        out
    }

    /// Whether any two turns (of any speakers) intersect.
    pub fn has_overlap(&self) -> bool {
        let mut sorted: Vec<&Interval> = self.intervals.iter().collect();
        sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
        sorted.windows(2).any(|w| w[1].start < w[0].end)
    }

    /// Turns sorted by start time (then speaker), the order used for RTTM output.
    pub fn sorted(&self) -> Vec<&Interval> {
        let mut sorted: Vec<&Interval> = self.intervals.iter().collect();
        sorted.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.speaker.cmp(&b.speaker)).then(a.end.total_cmp(&b.end)));
        sorted
    }

    /// Disjoint union of one speaker's turns.
    pub(crate) fn speaker_regions(&self, speaker: &str) -> Vec<(f64, f64)> {
        union(self.intervals.iter().filter(|iv| iv.speaker == speaker).map(|iv| (iv.start, iv.end)))
    }

    /// Disjoint union of all turns.
    pub(crate) fn speech(&self) -> Vec<(f64, f64)> {
        union(self.intervals.iter().map(|iv| (iv.start, iv.end)))
    }
}

pub(crate) fn union(spans: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = spans.filter(|(s, e)| e > s).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// A clustered segment on the recording timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub start: f64,
    pub duration: f64,
    pub label: usize,
}

/// Merges runs of contiguous same-label segments into maximal turns.
/// Segments are taken in start order; two segments are contiguous when the
/// gap between them is below a microsecond.
pub fn segments_to_annotation(uri: impl Into<String>, segments: &[LabeledSegment]) -> Annotation {
    let mut sorted: Vec<&LabeledSegment> = segments.iter().filter(|s| s.duration > 0.0).collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for s in sorted {
        let end = s.start + s.duration;
        match merged.last_mut() {
            Some(last) if last.2 == s.label && (s.start - last.1).abs() < 1e-6 => last.1 = end,
            _ => merged.push((s.start, end, s.label)),
        }
    }
    Annotation {
        uri: uri.into(),
        intervals: merged.into_iter().map(|(start, end, l)| Interval { start, end, speaker: l.to_string() }).collect(),
    }
}

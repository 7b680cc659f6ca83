use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::annotation::{union, Annotation};
use super::hungarian::max_weight_assignment;
use super::MetricError;

/// Error durations in seconds over the evaluation timeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DerBreakdown {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    /// Reference speaker time inside the evaluation timeline.
    pub total: f64,
}

impl DerBreakdown {
    /// `(miss + false alarm + confusion) / total`.
    pub fn der(&self) -> f64 {
        (self.miss + self.false_alarm + self.confusion) / self.total
    }

    pub fn confusion_rate(&self) -> f64 {
        self.confusion / self.total
    }
}

/// Sums durations, so the ratio of an accumulated breakdown is the
/// duration-weighted aggregate.
impl AddAssign for DerBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.miss += rhs.miss;
        self.false_alarm += rhs.false_alarm;
        self.confusion += rhs.confusion;
        self.total += rhs.total;
    }
}

fn subtract(base: &[(f64, f64)], cut: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(s, e) in base {
        let mut cursor = s;
        for &(cs, ce) in cut {
            if ce <= cursor || cs >= e {
                continue;
            }
            if cs > cursor {
                out.push((cursor, cs));
            }
            cursor = cursor.max(ce);
            if cursor >= e {
                break;
            }
        }
        if cursor < e {
            out.push((cursor, e));
        }
    }
    out
}

/// Regions where at least two of the given per-speaker unions are active.
fn overlaps(regions: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let mut events: Vec<(f64, i32)> = regions.iter().flatten().flat_map(|&(s, e)| [(s, 1), (e, -1)]).collect();
    // ends before starts at the same instant: half-open turns that touch do not overlap
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::new();
    let mut active = 0;
    let mut open = 0.0;
    for (t, delta) in events {
        if active < 2 && active + delta >= 2 {
            open = t;
        } else if active >= 2 && active + delta < 2 && t > open {
            out.push((open, t));
        }
        active += delta;
    }
    out
}

fn contains(regions: &[(f64, f64)], t: f64) -> bool {
    let idx = regions.partition_point(|&(s, _)| s <= t);
    idx > 0 && t < regions[idx - 1].1
}

fn length(spans: &[(f64, f64)]) -> f64 {
    spans.iter().map(|(s, e)| e - s).sum()
}

/// Diarization error rate of `hypothesis` against `reference`.
///
/// The evaluation timeline is reference speech minus `±collar` around every
/// reference turn boundary and, with `skip_overlap`, minus regions where two
/// or more reference speakers talk at once. Hypothesis speakers are mapped
/// one-to-one onto reference speakers to maximize matched time.
pub fn der(reference: &Annotation, hypothesis: &Annotation, collar: f64, skip_overlap: bool) -> Result<DerBreakdown, MetricError> {
    if reference.uri != hypothesis.uri {
        return Err(MetricError::UriMismatch { reference: reference.uri.clone(), hypothesis: hypothesis.uri.clone() });
    }
    if !(collar.is_finite() && collar >= 0.0) {
        return Err(MetricError::InvalidCollar(collar));
    }
    let speech = reference.speech();
    if speech.is_empty() {
        return Err(MetricError::EmptyTimeline("reference has no speech".into()));
    }
    let ref_speakers = reference.speakers();
    let hyp_speakers = hypothesis.speakers();
    let ref_regions: Vec<Vec<(f64, f64)>> = ref_speakers.iter().map(|s| reference.speaker_regions(s)).collect();
    let hyp_regions: Vec<Vec<(f64, f64)>> = hyp_speakers.iter().map(|s| hypothesis.speaker_regions(s)).collect();

    let mut timeline = speech;
    if collar > 0.0 {
        let zones = union(reference.intervals().iter().flat_map(|iv| [iv.start, iv.end]).map(|b| (b - collar, b + collar)));
        timeline = subtract(&timeline, &zones);
        if timeline.is_empty() {
            return Err(MetricError::EmptyTimeline(format!("a {collar} s collar removes all reference speech")));
        }
    }
    if skip_overlap {
        timeline = subtract(&timeline, &overlaps(&ref_regions));
        if timeline.is_empty() {
            return Err(MetricError::EmptyTimeline("all remaining reference speech is overlapped".into()));
        }
    }
    if length(&timeline) <= 0.0 {
        return Err(MetricError::EmptyTimeline("evaluation timeline has zero duration".into()));
    }

    let mut cuts: Vec<f64> = ref_regions.iter().chain(&hyp_regions).flatten().flat_map(|&(s, e)| [s, e]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut out = DerBreakdown::default();
    let mut co = vec![vec![0.0f64; hyp_speakers.len()]; ref_speakers.len()];
    let mut matchable = 0.0;
    for &(a, b) in &timeline {
        let inner = cuts.partition_point(|&c| c <= a)..cuts.partition_point(|&c| c < b);
        let points: Vec<f64> = std::iter::once(a).chain(cuts[inner].iter().copied()).chain(std::iter::once(b)).collect();
        for w in points.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 {
                continue;
            }
            let mid = w[0] + d / 2.0;
            let refs: Vec<usize> = (0..ref_regions.len()).filter(|&r| contains(&ref_regions[r], mid)).collect();
            let hyps: Vec<usize> = (0..hyp_regions.len()).filter(|&h| contains(&hyp_regions[h], mid)).collect();
            let (nr, nh) = (refs.len() as f64, hyps.len() as f64);
            out.total += d * nr;
            out.miss += d * (nr - nh).max(0.0);
            out.false_alarm += d * (nh - nr).max(0.0);
            matchable += d * nr.min(nh);
            for &r in &refs {
                for &h in &hyps {
                    co[r][h] += d;
                }
            }
        }
    }
    let matched: f64 = max_weight_assignment(&co).iter().enumerate().filter_map(|(r, h)| h.map(|h| co[r][h])).sum();
    out.confusion = (matchable - matched).max(0.0);
    Ok(out)
}

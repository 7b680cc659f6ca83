//! RTTM speaker lines:
//! `SPEAKER <uri> 1 <onset> <duration> <NA> <NA> <speaker> <NA> <NA>`.
//!
//! Times are written with millisecond resolution. Parsed times are snapped
//! to whole milliseconds so emit, parse, emit is byte-stable.

use std::fmt::Write as _;

use super::{Annotation, MetricError};

fn to_ms(seconds: f64) -> i64 {
    (seconds * 1000.0).round() as i64
}

fn fmt_ms(out: &mut String, ms: i64) {
    let sign = if ms < 0 { "-" } else { "" };
    let ms = ms.unsigned_abs();
    let _ = write!(out, "{sign}{}.{:03}", ms / 1000, ms % 1000);
}

/// Appends one line per turn, sorted by onset.
pub fn write_annotation(out: &mut String, annotation: &Annotation) {
    for iv in annotation.sorted() {
        let onset = to_ms(iv.start);
        let _ = write!(out, "SPEAKER {} 1 ", annotation.uri);
        fmt_ms(out, onset);
        out.push(' ');
        fmt_ms(out, to_ms(iv.end) - onset);
        let _ = writeln!(out, " <NA> <NA> {} <NA> <NA>", iv.speaker);
    }
}

pub fn to_string(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        write_annotation(&mut out, a);
    }
    out
}

/// Parses RTTM text into one annotation per uri, in order of first
/// appearance. Blank lines and lines starting with `;;` are skipped;
/// non-`SPEAKER` records are ignored.
pub fn parse(text: &str) -> Result<Vec<Annotation>, MetricError> {
    let mut out: Vec<Annotation> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| MetricError::Rttm { line: line_no, message };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(err(format!("expected at least 8 fields, found {}", fields.len())));
        }
        let number = |s: &str, what: &str| -> Result<f64, MetricError> {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(format!("invalid {what} {s:?}")))
        };
        let onset = to_ms(number(fields[3], "onset")?);
        let duration = to_ms(number(fields[4], "duration")?);
        if duration <= 0 {
            return Err(err(format!("non-positive duration {}", fields[4])));
        }
        let uri = fields[1];
        let idx = match out.iter().position(|a| a.uri == uri) {
            Some(idx) => idx,
            None => {
                out.push(Annotation::new(uri));
                out.len() - 1
            }
        };
        out[idx]
            .push(onset as f64 / 1000.0, (onset + duration) as f64 / 1000.0, fields[7])
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(out)
}

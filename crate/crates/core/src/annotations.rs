//! Chorus annotations and the target activation curves derived from them.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CHORUS: &str = "chorus";
pub const NON_CHORUS: &str = "non-chorus";

/// Length of the half-Hann ramp on each side of a chorus or boundary section (seconds).
pub const RAMP_SECONDS: f64 = 1.0;
/// Width of the plateau each boundary instant is widened to (seconds).
pub const BOUNDARY_SECTION_SECONDS: f64 = 0.5;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Segment {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_chorus(&self) -> bool {
        self.label == CHORUS
    }
}

/// Sorted, non-overlapping labelled intervals over a song.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentList {
    pub segments: Vec<Segment>,
    pub duration: f64,
}

impl SegmentList {
    /// Validates ordering, positivity and containment.
    pub fn new(mut segments: Vec<Segment>, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid song duration {duration}"
            )));
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        for (i, seg) in segments.iter().enumerate() {
            check_segment(seg, duration).map_err(|message| Error::Annotation {
                row: i + 1,
                message,
            })?;
            if i > 0 && seg.start < segments[i - 1].end - TIME_EPS {
                return Err(Error::Annotation {
                    row: i + 1,
                    message: format!(
                        "segment starting at {} overlaps the previous one",
                        seg.start
                    ),
                });
            }
        }
        Ok(Self { segments, duration })
    }

    pub fn empty(duration: f64) -> Self {
        Self {
            segments: Vec::new(),
            duration,
        }
    }

    pub fn chorus_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.is_chorus())
    }

    /// Whether `t` falls inside a chorus (half-open intervals).
    pub fn is_chorus_at(&self, t: f64) -> bool {
        self.chorus_segments().any(|s| s.start <= t && t < s.end)
    }

    /// Onset and offset instants of every chorus segment, sorted.
    pub fn chorus_boundaries(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .chorus_segments()
            .flat_map(|s| [s.start, s.end])
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
        out
    }

    /// Renders as `start_sec,end_sec,label` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_sec,end_sec,label\n");
        for s in &self.segments {
            let _ = writeln!(out, "{:.3},{:.3},{}", s.start, s.end, s.label);
        }
        out
    }
}

fn check_segment(seg: &Segment, duration: f64) -> std::result::Result<(), String> {
    if !(seg.start.is_finite() && seg.end.is_finite()) {
        return Err("non-finite timestamp".into());
    }
    if seg.start < 0.0 {
        return Err(format!("start {} is negative", seg.start));
    }
    if seg.end <= seg.start {
        return Err(format!("end {} is not after start {}", seg.end, seg.start));
    }
    if seg.end > duration + TIME_EPS {
        return Err(format!("end {} exceeds song duration {duration}", seg.end));
    }
    Ok(())
}

/// Parses `start_sec,end_sec,label` rows. Blank lines, `#` comments and a
/// literal header row are skipped; errors name the 1-based line number.
pub fn parse_annotations(text: &str, duration: f64) -> Result<SegmentList> {
    let mut rows: Vec<(usize, Segment)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let row = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (start, end, label) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c)) => (a.trim(), b.trim(), c.trim()),
            _ => {
                return Err(Error::Annotation {
                    row,
                    message: format!("expected start_sec,end_sec,label, got {line:?}"),
                })
            }
        };
        if start == "start_sec" && end == "end_sec" {
            continue;
        }
        let parse = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| Error::Annotation {
                row,
                message: format!("invalid {what} {s:?}"),
            })
        };
        let seg = Segment::new(parse(start, "start")?, parse(end, "end")?, label);
        check_segment(&seg, duration).map_err(|message| Error::Annotation { row, message })?;
        rows.push((row, seg));
    }
    rows.sort_by(|a, b| a.1.start.total_cmp(&b.1.start));
    for pair in rows.windows(2) {
        let (prev, next) = (&pair[0].1, &pair[1]);
        if next.1.start < prev.end - TIME_EPS {
            return Err(Error::Annotation {
                row: next.0,
                message: format!(
                    "segment [{}, {}] overlaps [{}, {}]",
                    next.1.start, next.1.end, prev.start, prev.end
                ),
            });
        }
    }
    Ok(SegmentList {
        segments: rows.into_iter().map(|(_, s)| s).collect(),
        duration,
    })
}

fn is_chorus_label(label: &str) -> bool {
    matches!(
        label.trim().to_ascii_lowercase().as_str(),
        "chorus" | "post-chorus" | "postchorus"
    )
}

/// Collapses labels to chorus / non-chorus and merges touching choruses.
/// The result only lists chorus segments; everything else is implicit.
pub fn normalize_chorus_labels(s: &SegmentList) -> SegmentList {
    let mut merged: Vec<Segment> = Vec::new();
    for seg in s.segments.iter().filter(|seg| is_chorus_label(&seg.label)) {
        match merged.last_mut() {
            Some(last) if seg.start <= last.end + TIME_EPS => last.end = last.end.max(seg.end),
            _ => merged.push(Segment::new(seg.start, seg.end, CHORUS)),
        }
    }
    SegmentList {
        segments: merged,
        duration: s.duration,
    }
}

/// Per-frame values in [0, 1] on a uniform grid; frame `i` is sampled at its
/// center time `(i + 0.5) / frame_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCurve {
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

impl ActivationCurve {
    pub fn new(values: Vec<f64>, frame_rate: f64) -> Self {
        Self { values, frame_rate }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        (index as f64 + 0.5) / self.frame_rate
    }

    /// Hard labels at `threshold` (value >= threshold is positive).
    pub fn binarize(&self, threshold: f64) -> Vec<bool> {
        self.values.iter().map(|&v| v >= threshold).collect()
    }
}

/// Frame count of a song of `duration` seconds on a grid of `frame_rate`.
pub fn num_frames_for(duration: f64, frame_rate: f64) -> usize {
    (duration * frame_rate + 1e-6).floor() as usize
}

/// Rising half of a Hann window, `u` in [0, 1].
pub fn hann_ramp(u: f64) -> f64 {
    0.5 * (1.0 - (PI * u.clamp(0.0, 1.0)).cos())
}

/// Plateau of 1 on `[lo, hi]` with 1-second half-Hann ramps outside it.
fn ramped_plateau(t: f64, lo: f64, hi: f64) -> f64 {
    if t < lo - RAMP_SECONDS || t > hi + RAMP_SECONDS {
        0.0
    } else if t < lo {
        hann_ramp((t - (lo - RAMP_SECONDS)) / RAMP_SECONDS)
    } else if t <= hi {
        1.0
    } else {
        hann_ramp(((hi + RAMP_SECONDS) - t) / RAMP_SECONDS)
    }
}

/// Chorus target at time `t` for normalized annotations.
pub fn chorus_value_at(s: &SegmentList, t: f64) -> f64 {
    s.chorus_segments()
        .map(|seg| ramped_plateau(t, seg.start, seg.end))
        .fold(0.0, f64::max)
}

/// Boundary target at time `t`: a 0.5 s plateau centered on every chorus
/// onset/offset, ramped on both sides (2.5 s total support).
pub fn boundary_value_at(s: &SegmentList, t: f64) -> f64 {
    let half = BOUNDARY_SECTION_SECONDS / 2.0;
    s.chorus_boundaries()
        .into_iter()
        .map(|tau| ramped_plateau(t, tau - half, tau + half))
        .fold(0.0, f64::max)
}

pub fn chorus_curve(s: &SegmentList, frame_rate: f64, num_frames: usize) -> ActivationCurve {
    sample_curve(frame_rate, num_frames, |t| chorus_value_at(s, t))
}

pub fn boundary_curve(s: &SegmentList, frame_rate: f64, num_frames: usize) -> ActivationCurve {
    sample_curve(frame_rate, num_frames, |t| boundary_value_at(s, t))
}

fn sample_curve(frame_rate: f64, num_frames: usize, f: impl Fn(f64) -> f64) -> ActivationCurve {
    let values = (0..num_frames)
        .map(|i| f((i as f64 + 0.5) / frame_rate))
        .collect();
    ActivationCurve::new(values, frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FR: f64 = 31.25;

    fn chorus_song(spans: &[(f64, f64)], duration: f64) -> SegmentList {
        SegmentList::new(
            spans
                .iter()
                .map(|&(a, b)| Segment::new(a, b, CHORUS))
                .collect(),
            duration,
        )
        .unwrap()
    }

    #[test]
    fn parse_single_row() {
        let s = parse_annotations("10.0,20.0,chorus", 30.0).unwrap();
        assert_eq!(s.segments, vec![Segment::new(10.0, 20.0, "chorus")]);
    }

    #[test]
    fn parse_empty_and_comments() {
        assert!(parse_annotations("", 30.0).unwrap().segments.is_empty());
        let s =
            parse_annotations("# header\nstart_sec,end_sec,label\n\n1,2,verse\n", 30.0).unwrap();
        assert_eq!(s.segments.len(), 1);
    }

    #[test]
    fn parse_errors_name_rows() {
        let err = parse_annotations("5,4,chorus", 30.0).unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 1, .. }), "{err}");
        let err = parse_annotations("0,5,verse\n4,8,chorus", 30.0).unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 2, .. }), "{err}");
        let err = parse_annotations("0,5,verse\n25,31,chorus", 30.0).unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 2, .. }), "{err}");
        assert!(parse_annotations("0,x,verse", 30.0).is_err());
        assert!(parse_annotations("0,1", 30.0).is_err());
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let s = parse_annotations("10,20,chorus\n0,10,verse", 30.0).unwrap();
        assert_eq!(s.segments[0].label, "verse");
    }

    #[test]
    fn normalize_merges_post_chorus_and_drops_pre_chorus() {
        let s = parse_annotations(
            "0,10,verse\n10,15,pre-chorus\n15,30,Chorus\n30,35,Post-Chorus",
            40.0,
        )
        .unwrap();
        let n = normalize_chorus_labels(&s);
        assert_eq!(n.segments, vec![Segment::new(15.0, 35.0, CHORUS)]);
        assert_eq!(normalize_chorus_labels(&n), n);
    }

    #[test]
    fn normalize_all_verse_and_touching_choruses() {
        let s = parse_annotations("0,10,verse\n10,20,verse", 20.0).unwrap();
        assert!(normalize_chorus_labels(&s).segments.is_empty());
        let s = parse_annotations("0,10,chorus\n10,20,chorus", 20.0).unwrap();
        assert_eq!(
            normalize_chorus_labels(&s).segments,
            vec![Segment::new(0.0, 20.0, CHORUS)]
        );
    }

    #[test]
    fn chorus_ramp_geometry() {
        let s = chorus_song(&[(10.0, 20.0)], 30.0);
        assert_eq!(chorus_value_at(&s, 8.99), 0.0);
        assert!((chorus_value_at(&s, 9.5) - 0.5).abs() < 1e-12);
        assert_eq!(chorus_value_at(&s, 10.0), 1.0);
        assert_eq!(chorus_value_at(&s, 15.0), 1.0);
        assert!((chorus_value_at(&s, 20.5) - 0.5).abs() < 1e-12);
        assert_eq!(chorus_value_at(&s, 21.01), 0.0);
        let c = chorus_curve(&s, FR, num_frames_for(30.0, FR));
        assert_eq!(c.len(), 937);
        assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn no_choruses_gives_zero_curves() {
        let s = SegmentList::empty(30.0);
        assert!(chorus_curve(&s, FR, 900).values.iter().all(|&v| v == 0.0));
        assert!(boundary_curve(&s, FR, 900).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_bump_geometry() {
        let s = chorus_song(&[(10.0, 20.0)], 40.0);
        assert_eq!(boundary_value_at(&s, 8.75), 0.0);
        assert!(boundary_value_at(&s, 8.76) > 0.0);
        assert!((boundary_value_at(&s, 9.25) - 0.5).abs() < 1e-12);
        assert_eq!(boundary_value_at(&s, 9.75), 1.0);
        assert_eq!(boundary_value_at(&s, 10.25), 1.0);
        assert!(boundary_value_at(&s, 11.24) > 0.0);
        assert_eq!(boundary_value_at(&s, 11.25), 0.0);
        // Second bump at the offset.
        assert_eq!(boundary_value_at(&s, 20.0), 1.0);
        assert_eq!(boundary_value_at(&s, 15.0), 0.0);

        let b = boundary_curve(&s, FR, num_frames_for(40.0, FR));
        let support = b.values.iter().filter(|&&v| v > 0.0).count();
        let expected = (2.5 * FR).round() as i64 * 2;
        assert!((support as i64 - expected).abs() <= 2, "{support}");
    }

    #[test]
    fn csv_round_trip() {
        let s = chorus_song(&[(1.5, 4.25), (10.0, 12.0)], 20.0);
        let parsed = parse_annotations(&s.to_csv(), 20.0).unwrap();
        assert_eq!(parsed, s);
    }
}

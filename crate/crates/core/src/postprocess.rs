//! Decoding merged activation curves into chorus / non-chorus segments.
//!
//! Three phases: boundary peaks are picked per 10 s window and scored against
//! their local context; the top `P` peaks partition the song; the `R`
//! segments with the highest mean chorus probability are labelled chorus.
//! `P` and `R` scale with song duration through the dataset prior `theta`
//! (choruses per three minutes).

use std::io::Write;

use serde::Serialize;

use crate::annotations::{ActivationCurve, Segment, SegmentList, CHORUS, NON_CHORUS};
use crate::error::{Error, Result};

/// Width of the non-overlapping peak-picking windows (seconds).
pub const PEAK_WINDOW_SECONDS: f64 = 10.0;
/// Context before / after a peak used for its score (seconds).
pub const CONTEXT_PAST_SECONDS: f64 = 10.0;
pub const CONTEXT_FUTURE_SECONDS: f64 = 5.0;
/// Reference duration of the prior (seconds).
pub const PRIOR_SECONDS: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakCandidate {
    pub time_sec: f64,
    pub prob: f64,
    /// `prob` minus the mean of the curve over `[t - 10 s, t + 5 s]`.
    pub score: f64,
    /// Index on the curve grid.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Model,
    Oracle,
}

/// Binary segmentation of a song; segments partition `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub segments: SegmentList,
    pub provenance: Provenance,
    /// Number of peaks and chorus segments requested.
    pub p: usize,
    pub r: usize,
}

impl DetectionResult {
    pub fn duration(&self) -> f64 {
        self.segments.duration
    }

    pub fn to_csv(&self) -> String {
        self.segments.to_csv()
    }

    /// Structured-text (JSON) form of the detection.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            start_sec: f64,
            end_sec: f64,
            label: &'a str,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            duration_sec: f64,
            provenance: Provenance,
            peaks: usize,
            chorus_segments: usize,
            segments: Vec<Row<'a>>,
        }
        let doc = Doc {
            duration_sec: self.segments.duration,
            provenance: self.provenance,
            peaks: self.p,
            chorus_segments: self.r,
            segments: self
                .segments
                .segments
                .iter()
                .map(|s| Row {
                    start_sec: s.start,
                    end_sec: s.end,
                    label: &s.label,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serialisable")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}

/// Average number of choruses per three minutes in the training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetPrior {
    pub theta: f64,
}

impl DatasetPrior {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta must be positive, got {theta}"
            )));
        }
        Ok(Self { theta })
    }
}

/// `theta = (normalized chorus segments / total seconds) * 180`.
pub fn compute_theta(training: &[SegmentList]) -> Result<DatasetPrior> {
    if training.is_empty() {
        return Err(Error::InvalidArgument("no training annotations".into()));
    }
    let total: f64 = training.iter().map(|s| s.duration).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "training annotations have zero total duration".into(),
        ));
    }
    let count: usize = training
        .iter()
        .map(|s| {
            crate::annotations::normalize_chorus_labels(s)
                .segments
                .len()
        })
        .sum();
    DatasetPrior::new(count as f64 / total * PRIOR_SECONDS)
        .map_err(|_| Error::InvalidArgument("training annotations contain no chorus".into()))
}

fn round_half_up(x: f64) -> usize {
    // The tolerance absorbs representation error in products such as 2.5 * 7.4.
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// `(P, R)` for a song of `d` seconds: `R = 2 d theta / 180`, `P = 2.5 R`,
/// each rounded half-up and floored at 1.
pub fn compute_pr(d: f64, prior: DatasetPrior) -> (usize, usize) {
    let r = 2.0 * d * prior.theta / PRIOR_SECONDS;
    let p = 2.5 * r;
    (round_half_up(p).max(1), round_half_up(r).max(1))
}

fn window_of(time: f64) -> usize {
    (time / PEAK_WINDOW_SECONDS).floor() as usize
}

/// Mean of the curve over frames whose centres lie in `[lo, hi]`.
fn context_mean(b: &ActivationCurve, lo: f64, hi: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &v) in b.values.iter().enumerate() {
        let t = b.time_of(i);
        if t >= lo && t <= hi {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One candidate per 10 s window (the maximum, earliest on ties), scored
/// against the context mean and sorted by score descending (earlier first on ties).
/// Frames belong to the window containing their centre time.
pub fn pick_boundary_peaks(b: &ActivationCurve) -> Vec<PeakCandidate> {
    let mut best: Vec<Option<usize>> = Vec::new();
    for (i, &v) in b.values.iter().enumerate() {
        let w = window_of(b.time_of(i));
        if best.len() <= w {
            best.resize(w + 1, None);
        }
        match best[w] {
            Some(j) if b.values[j] >= v => {}
            _ => best[w] = Some(i),
        }
    }
    let mut out: Vec<PeakCandidate> = best
        .into_iter()
        .flatten()
        .map(|i| {
            let t = b.time_of(i);
            let prob = b.values[i];
            PeakCandidate {
                time_sec: t,
                prob,
                score: prob - context_mean(b, t - CONTEXT_PAST_SECONDS, t + CONTEXT_FUTURE_SECONDS),
                index: i,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    out
}

/// Mean chorus probability over frames with centres in `[start, end)`; when
/// no centre falls inside, the frame containing the segment midpoint.
pub fn segment_likelihood(c: &ActivationCurve, start: f64, end: f64) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &v) in c.values.iter().enumerate() {
        let t = c.time_of(i);
        if t >= start && t < end {
            sum += v;
            n += 1;
        }
    }
    if n > 0 {
        return sum / n as f64;
    }
    let mid = ((0.5 * (start + end) * c.frame_rate).floor().max(0.0) as usize).min(c.len() - 1);
    c.values[mid]
}

/// Partitions `[0, d]` at `cuts`, labels the `r` segments of highest mean
/// chorus probability as chorus (earlier segments win ties) and merges runs.
pub fn label_partition(c: &ActivationCurve, cuts: &[f64], d: f64, r: usize) -> SegmentList {
    let mut edges: Vec<f64> = cuts.iter().copied().filter(|&t| t > 0.0 && t < d).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges.insert(0, 0.0);
    edges.push(d);
    let spans: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
    let likelihood: Vec<f64> = spans
        .iter()
        .map(|&(a, b)| segment_likelihood(c, a, b))
        .collect();
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&i, &j| likelihood[j].total_cmp(&likelihood[i]).then(i.cmp(&j)));
    let mut chorus = vec![false; spans.len()];
    for &i in order.iter().take(r) {
        chorus[i] = true;
    }
    let mut segments: Vec<Segment> = Vec::new();
    for (&(a, b), &is_chorus) in spans.iter().zip(&chorus) {
        let label = if is_chorus { CHORUS } else { NON_CHORUS };
        match segments.last_mut() {
            Some(last) if last.label == label => last.end = b,
            _ => segments.push(Segment::new(a, b, label)),
        }
    }
    SegmentList {
        segments,
        duration: d,
    }
}

/// Full decoder with `(P, R)` derived from the prior.
pub fn binarize(
    c: &ActivationCurve,
    b: &ActivationCurve,
    d: f64,
    prior: DatasetPrior,
) -> Result<DetectionResult> {
    let (p, r) = compute_pr(d, prior);
    binarize_with(c, b, d, p, r)
}

/// Decoder with explicit peak and chorus-segment counts.
pub fn binarize_with(
    c: &ActivationCurve,
    b: &ActivationCurve,
    d: f64,
    p: usize,
    r: usize,
) -> Result<DetectionResult> {
    check_inputs(c, d)?;
    if c.len() != b.len() || c.frame_rate != b.frame_rate {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "boundary curve of {} frames at {} fps",
                c.len(),
                c.frame_rate
            ),
            actual: format!("{} frames at {} fps", b.len(), b.frame_rate),
        });
    }
    let cuts: Vec<f64> = pick_boundary_peaks(b)
        .iter()
        .take(p)
        .map(|pk| pk.time_sec)
        .collect();
    Ok(DetectionResult {
        segments: label_partition(c, &cuts, d, r),
        provenance: Provenance::Model,
        p,
        r,
    })
}

/// Reference decoder that partitions at the true boundaries and labels the
/// `true_count` most chorus-like segments.
pub fn oracle_bound(
    c: &ActivationCurve,
    true_boundaries: &[f64],
    true_count: usize,
    d: f64,
) -> Result<DetectionResult> {
    check_inputs(c, d)?;
    if true_boundaries.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "oracle boundaries must be sorted".into(),
        ));
    }
    Ok(DetectionResult {
        segments: label_partition(c, true_boundaries, d, true_count),
        provenance: Provenance::Oracle,
        p: true_boundaries.len(),
        r: true_count,
    })
}

fn check_inputs(c: &ActivationCurve, d: f64) -> Result<()> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "song duration must be positive, got {d}"
        )));
    }
    if c.is_empty() {
        return Err(Error::InvalidArgument("empty activation curve".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: Vec<f64>, rate: f64) -> ActivationCurve {
        ActivationCurve::new(values, rate)
    }

    #[test]
    fn theta_examples() {
        let song = |d: f64, n: usize| {
            let segs = (0..n)
                .map(|i| Segment::new(i as f64 * 20.0, i as f64 * 20.0 + 10.0, CHORUS))
                .collect();
            SegmentList::new(segs, d).unwrap()
        };
        assert!((compute_theta(&[song(180.0, 3)]).unwrap().theta - 3.0).abs() < 1e-12);
        let two = compute_theta(&[song(180.0, 2), song(360.0, 4)]).unwrap();
        assert!((two.theta - 2.0).abs() < 1e-12);
        assert!(compute_theta(&[]).is_err());
        assert!(compute_theta(&[SegmentList::empty(0.0)]).is_err());
    }

    #[test]
    fn pr_examples() {
        assert_eq!(compute_pr(180.0, DatasetPrior { theta: 2.2 }), (11, 4));
        assert_eq!(compute_pr(180.0, DatasetPrior { theta: 3.7 }), (19, 7));
        assert_eq!(compute_pr(10.0, DatasetPrior { theta: 2.2 }), (1, 1));
    }

    #[test]
    fn constant_curve_peaks() {
        let b = curve(vec![0.3; 300], 5.0);
        let peaks = pick_boundary_peaks(&b);
        assert_eq!(peaks.len(), 6);
        assert!(peaks.iter().all(|p| p.score.abs() < 1e-12));
        // Ties resolve to the earliest frame of each window, windows in time order.
        let idx: Vec<usize> = peaks.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![0, 50, 100, 150, 200, 250]);
    }

    #[test]
    fn short_song_single_candidate() {
        let b = curve((0..40).map(|i| i as f64 / 40.0).collect(), 5.0);
        assert_eq!(pick_boundary_peaks(&b).len(), 1);
    }

    #[test]
    fn triangular_bump_is_positive_candidate() {
        let rate = 5.0;
        let apex = (15.0 * rate) as usize;
        let b = curve(
            (0..300)
                .map(|i| (1.0 - (i as f64 - apex as f64).abs() / 10.0).max(0.0))
                .collect(),
            rate,
        );
        let peaks = pick_boundary_peaks(&b);
        let top = peaks[0];
        assert_eq!(top.index, apex);
        assert!(top.score > 0.0);
    }

    #[test]
    fn adjacent_chorus_segments_merge() {
        let c = curve(vec![0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1], 1.0);
        let out = label_partition(&c, &[2.0, 4.0, 6.0], 8.0, 2);
        assert_eq!(
            out.segments,
            vec![
                Segment::new(0.0, 4.0, CHORUS),
                Segment::new(4.0, 8.0, NON_CHORUS)
            ]
        );
        let all = label_partition(&c, &[2.0, 4.0, 6.0], 8.0, 10);
        assert_eq!(all.segments, vec![Segment::new(0.0, 8.0, CHORUS)]);
    }

    #[test]
    fn oracle_constant_curve_takes_earliest() {
        let c = curve(vec![0.5; 60], 1.0);
        let out = oracle_bound(&c, &[10.0, 20.0, 30.0, 40.0], 2, 60.0).unwrap();
        assert_eq!(out.segments.segments[0], Segment::new(0.0, 20.0, CHORUS));
        assert_eq!(out.provenance, Provenance::Oracle);
    }

    #[test]
    fn json_output_lists_segments() {
        let c = curve(vec![0.9; 10], 1.0);
        let out = binarize_with(&c, &c, 10.0, 1, 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.to_json()).unwrap();
        assert_eq!(v["segments"][0]["label"], "chorus");
        assert_eq!(v["provenance"], "model");
    }
}

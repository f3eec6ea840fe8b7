//! Frame-wise AUC and pairwise segmentation F1.

use std::io::Write;

use crate::annotations::{ActivationCurve, SegmentList};
use crate::error::{Error, Result};

/// Default sampling rate of the pairwise F1 (frames per second).
pub const EVAL_RATE: f64 = 10.0;

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn auc(pred: &[f64], reference: &[bool]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", reference.len()),
            actual: format!("{}", pred.len()),
        });
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    let n_pos = reference.iter().filter(|&&r| r).count();
    let n_neg = reference.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    // Sum over positives of (negatives strictly below + half the tied negatives),
    // counted in integer half-units so the result is exact up to the final division.
    let mut half_units: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && pred[order[j]] == pred[order[i]] {
            j += 1;
        }
        let pos_here = order[i..j].iter().filter(|&&k| reference[k]).count() as u128;
        let neg_here = (j - i) as u128 - pos_here;
        half_units += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(half_units as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// AUC of a curve against its reference binarised at 0.5.
pub fn curve_auc(pred: &ActivationCurve, reference: &ActivationCurve) -> Result<f64> {
    auc(&pred.values, &reference.binarize(0.5))
}

/// Chorus indicator sampled at frame centres `(i + 0.5) / rate`.
pub fn sample_labels(s: &SegmentList, rate: f64) -> Vec<bool> {
    let n = (s.duration * rate + 1e-9).floor() as usize;
    (0..n)
        .map(|i| s.is_chorus_at((i as f64 + 0.5) / rate))
        .collect()
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// `(precision, recall, f1)` of frame-pair co-membership from paired label sequences.
pub fn pairwise_f1_labels(est: &[bool], reference: &[bool]) -> Result<(f64, f64, f64)> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} frames", reference.len()),
            actual: format!("{}", est.len()),
        });
    }
    if est.is_empty() {
        return Err(Error::InvalidArgument(
            "pairwise F1 of an empty song".into(),
        ));
    }
    let mut n = [[0u64; 2]; 2];
    for (&r, &e) in reference.iter().zip(est) {
        n[r as usize][e as usize] += 1;
    }
    let agree: u64 = n.iter().flatten().map(|&x| pairs(x)).sum();
    let ref_pairs = pairs(n[0][0] + n[0][1]) + pairs(n[1][0] + n[1][1]);
    let est_pairs = pairs(n[0][0] + n[1][0]) + pairs(n[0][1] + n[1][1]);
    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let precision = ratio(agree, est_pairs);
    let recall = ratio(agree, ref_pairs);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Pairwise F1 of an estimated segmentation against a reference, both sampled at `eval_rate`.
pub fn pairwise_f1(
    est: &SegmentList,
    reference: &SegmentList,
    eval_rate: f64,
) -> Result<(f64, f64, f64)> {
    if !(eval_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "evaluation rate must be positive, got {eval_rate}"
        )));
    }
    if !(reference.duration > 0.0) {
        return Err(Error::InvalidArgument("zero-duration song".into()));
    }
    if (est.duration - reference.duration).abs() > 1.0 / eval_rate {
        return Err(Error::InvalidArgument(format!(
            "durations differ: estimate {} s, reference {} s",
            est.duration, reference.duration
        )));
    }
    let r = sample_labels(reference, eval_rate);
    let e: Vec<bool> = (0..r.len())
        .map(|i| est.is_chorus_at((i as f64 + 0.5) / eval_rate))
        .collect();
    pairwise_f1_labels(&e, &r)
}

/// One row of an evaluation report; `auc` is absent when it is undefined or not applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct SongScore {
    pub song_id: String,
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted per-song means `(auc, precision, recall, f1)`; the AUC mean skips undefined songs.
pub fn mean_scores(rows: &[SongScore]) -> (Option<f64>, f64, f64, f64) {
    let n = rows.len().max(1) as f64;
    let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    (
        auc,
        rows.iter().map(|r| r.precision).sum::<f64>() / n,
        rows.iter().map(|r| r.recall).sum::<f64>() / n,
        rows.iter().map(|r| r.f1).sum::<f64>() / n,
    )
}

/// Writes `song_id,auc,precision,recall,f1` rows and a final `mean` row.
pub fn write_report<W: Write>(rows: &[SongScore], mut out: W) -> std::io::Result<()> {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    writeln!(out, "song_id,auc,precision,recall,f1")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.song_id,
            fmt(r.auc),
            r.precision,
            r.recall,
            r.f1
        )?;
    }
    let (a, p, r, f) = mean_scores(rows);
    writeln!(out, "mean,{},{p:.6},{r:.6},{f:.6}", fmt(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{Segment, CHORUS};

    #[test]
    fn auc_examples() {
        let r = [true, true, false, false];
        assert_eq!(auc(&[0.9, 0.4, 0.6, 0.1], &r).unwrap(), 0.75);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &r).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &r).unwrap(), 0.5);
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(Error::AucUndefined)
        ));
    }

    #[test]
    fn f1_examples() {
        let (p, r, f) = pairwise_f1_labels(&[true; 4], &[true, true, false, false]).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r, 1.0);
        assert!((f - 0.5).abs() < 1e-15);
        let same = [true, false, true, true];
        assert_eq!(pairwise_f1_labels(&same, &same).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn f1_on_segments() {
        let reference = SegmentList::new(vec![Segment::new(10.0, 20.0, CHORUS)], 40.0).unwrap();
        assert_eq!(
            pairwise_f1(&reference, &reference, EVAL_RATE).unwrap(),
            (1.0, 1.0, 1.0)
        );
        assert!(pairwise_f1(
            &SegmentList::empty(0.0),
            &SegmentList::empty(0.0),
            EVAL_RATE
        )
        .is_err());
    }

    #[test]
    fn report_has_mean_row() {
        let rows = vec![
            SongScore {
                song_id: "a".into(),
                auc: Some(1.0),
                precision: 1.0,
                recall: 0.5,
                f1: 2.0 / 3.0,
            },
            SongScore {
                song_id: "b".into(),
                auc: None,
                precision: 0.5,
                recall: 0.5,
                f1: 0.5,
            },
        ];
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .lines()
            .last()
            .unwrap()
            .starts_with("mean,1.000000,0.750000,0.500000"));
    }
}

//! Song-level prediction: slide the model over a song and merge overlapping
//! chunk outputs on the pooled output grid.

use std::io::Write;

use ndarray::ArrayView2;

use crate::annotations::ActivationCurve;
use crate::chunking::{chunk_at, chunk_offsets};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::network::model::expect_variant;
use crate::network::{predict_chunks, ModelParams, Real, Variant};

/// Default hop between inference chunks, in input frames.
pub const INFERENCE_HOP: usize = 30;
/// Hop of the scalar path: one chunk per output-grid index.
pub const SCALAR_HOP: usize = 6;

const PREDICT_BATCH: usize = 16;

/// Merged song-level curves on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SongPrediction {
    pub chorus: ActivationCurve,
    pub boundary: ActivationCurve,
}

/// Output-grid length for a song of `frames` input frames.
pub fn output_len(frames: usize, pool: usize) -> usize {
    frames.div_ceil(pool)
}

/// Averages overlapping chunk predictions: each `(start, values)` writes
/// `values[j]` at global index `start + j`; entries past `l_out` are dropped.
///
/// Contributions are summed in a canonical order, so the result does not
/// depend on the order of `chunk_preds`, and each mean is clamped to its
/// contributors' range so rounding never leaves it (a constant field merges
/// to exactly that constant).
pub fn merge_overlaps(
    chunk_preds: &[(usize, Vec<f64>)],
    l_out: usize,
    frame_rate: f64,
) -> Result<ActivationCurve> {
    let mut order: Vec<&(usize, Vec<f64>)> = chunk_preds.iter().collect();
    order.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(a.1.len().cmp(&b.1.len()))
        })
    });
    let mut sum = vec![0.0; l_out];
    let mut count = vec![0usize; l_out];
    let mut lo = vec![f64::INFINITY; l_out];
    let mut hi = vec![f64::NEG_INFINITY; l_out];
    for (start, values) in order {
        for (j, &v) in values.iter().enumerate() {
            let t = start + j;
            if t >= l_out {
                break;
            }
            sum[t] += v;
            count[t] += 1;
            lo[t] = lo[t].min(v);
            hi[t] = hi[t].max(v);
        }
    }
    if let Some(gap) = count.iter().position(|&c| c == 0) {
        return Err(Error::CoverageGap(gap));
    }
    let values = (0..l_out)
        .map(|t| (sum[t] / count[t] as f64).clamp(lo[t], hi[t]))
        .collect();
    Ok(ActivationCurve::new(values, frame_rate))
}

/// Number of chunks contributing to each output index (|Q(t)|) for a song of
/// `frames` input frames, chunk length `n`, hop `hop` and label pool `pool`.
pub fn contributor_counts(frames: usize, n: usize, hop: usize, pool: usize) -> Result<Vec<usize>> {
    let l_out = output_len(frames, pool);
    let mut count = vec![0usize; l_out];
    for offset in chunk_offsets(frames, n, hop, pool)? {
        let start = offset / pool;
        for c in count.iter_mut().skip(start).take(n / pool) {
            *c += 1;
        }
    }
    Ok(count)
}

fn check_hop(hop: usize, pool: usize) -> Result<()> {
    if hop == 0 || !hop.is_multiple_of(pool) {
        return Err(Error::InvalidArgument(format!(
            "chunk hop {hop} must be a positive multiple of the output pool {pool}"
        )));
    }
    Ok(())
}

fn check_mels<A>(params: &ModelParams<A>, mel: &MelSpectrogram) -> Result<()> {
    if mel.n_mels() != params.config.n_mels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mel bands", params.config.n_mels),
            actual: format!("{} mel bands", mel.n_mels()),
        });
    }
    if mel.num_frames() == 0 {
        return Err(Error::InvalidArgument("empty spectrogram".into()));
    }
    Ok(())
}

/// Temporal-model song prediction with chunk hop `hop` (a multiple of the output pool).
pub fn predict_song<A: Real>(
    params: &ModelParams<A>,
    mel: &MelSpectrogram,
    hop: usize,
) -> Result<SongPrediction> {
    expect_variant(params, Variant::Temporal).map_err(|e| match e {
        Error::Variant(msg) => {
            Error::Variant(format!("{msg}; use predict_song_scalar for scalar models"))
        }
        other => other,
    })?;
    let cfg = &params.config;
    check_mels(params, mel)?;
    check_hop(hop, cfg.input_pool)?;
    let offsets = chunk_offsets(mel.num_frames(), cfg.n_frames, hop, cfg.input_pool)?;
    let chunks: Vec<_> = offsets
        .iter()
        .map(|&o| chunk_at(mel, None, cfg.n_frames, o, 0))
        .collect();
    let views: Vec<ArrayView2<'_, f64>> = chunks.iter().map(|c| c.features.view()).collect();
    let preds = predict_chunks(params, &views, PREDICT_BATCH)?;
    let l_out = output_len(mel.num_frames(), cfg.input_pool);
    let rate = mel.frame_rate / cfg.input_pool as f64;
    let (mut chorus, mut boundary) = (Vec::new(), Vec::new());
    for (&o, (c, b)) in offsets.iter().zip(preds) {
        chorus.push((o / cfg.input_pool, c));
        boundary.push((o / cfg.input_pool, b));
    }
    Ok(SongPrediction {
        chorus: merge_overlaps(&chorus, l_out, rate)?,
        boundary: merge_overlaps(&boundary, l_out, rate)?,
    })
}

/// Input-frame offset of the chunk centred on output index `g`, clamped to the song.
pub fn scalar_chunk_offset(g: usize, frames: usize, n: usize, pool: usize) -> usize {
    let center = n / 2;
    let max_offset = frames.saturating_sub(n);
    (g * pool).saturating_sub(center).min(max_offset)
}

/// Scalar-model song prediction: one chunk per output index, no merging.
pub fn predict_song_scalar<A: Real>(
    params: &ModelParams<A>,
    mel: &MelSpectrogram,
) -> Result<SongPrediction> {
    expect_variant(params, Variant::Scalar).map_err(|e| match e {
        Error::Variant(msg) => {
            Error::Variant(format!("{msg}; use predict_song for temporal models"))
        }
        other => other,
    })?;
    let cfg = &params.config;
    check_mels(params, mel)?;
    let frames = mel.num_frames();
    let l_out = output_len(frames, cfg.input_pool);
    let offsets: Vec<usize> = (0..l_out)
        .map(|g| scalar_chunk_offset(g, frames, cfg.n_frames, cfg.input_pool))
        .collect();
    // Clamped edge chunks repeat; forward each distinct offset once.
    let mut distinct = offsets.clone();
    distinct.dedup();
    let chunks: Vec<_> = distinct
        .iter()
        .map(|&o| chunk_at(mel, None, cfg.n_frames, o, 0))
        .collect();
    let views: Vec<ArrayView2<'_, f64>> = chunks.iter().map(|c| c.features.view()).collect();
    let preds = predict_chunks(params, &views, PREDICT_BATCH)?;
    let mut chorus = Vec::with_capacity(l_out);
    let mut boundary = Vec::with_capacity(l_out);
    let mut k = 0;
    for &o in &offsets {
        while distinct[k] != o {
            k += 1;
        }
        chorus.push(preds[k].0[0]);
        boundary.push(preds[k].1[0]);
    }
    let rate = mel.frame_rate / cfg.input_pool as f64;
    Ok(SongPrediction {
        chorus: ActivationCurve::new(chorus, rate),
        boundary: ActivationCurve::new(boundary, rate),
    })
}

/// Dispatches on the checkpoint variant.
pub fn predict<A: Real>(params: &ModelParams<A>, mel: &MelSpectrogram) -> Result<SongPrediction> {
    match params.variant() {
        Variant::Temporal => predict_song(params, mel, INFERENCE_HOP),
        Variant::Scalar => predict_song_scalar(params, mel),
    }
}

/// Writes `time_sec,chorus_prob,boundary_prob`, one row per output frame (frame centres).
pub fn write_activations<W: Write>(pred: &SongPrediction, mut out: W) -> std::io::Result<()> {
    writeln!(out, "time_sec,chorus_prob,boundary_prob")?;
    for (i, (c, b)) in pred
        .chorus
        .values
        .iter()
        .zip(&pred.boundary.values)
        .enumerate()
    {
        writeln!(out, "{:.4},{c:.6},{b:.6}", pred.chorus.time_of(i))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_examples() {
        let m = merge_overlaps(&[(0, vec![0.2, 0.2]), (1, vec![0.4, 0.4])], 3, 1.0).unwrap();
        assert!((m.values[1] - 0.3).abs() < 1e-15);
        assert_eq!(m.values[0], 0.2);
        assert_eq!(m.values[2], 0.4);
        let single = merge_overlaps(&[(0, vec![0.1, 0.9, 0.5])], 3, 1.0).unwrap();
        assert_eq!(single.values, vec![0.1, 0.9, 0.5]);
    }

    #[test]
    fn merge_reports_gap() {
        let err = merge_overlaps(&[(0, vec![0.5]), (2, vec![0.5])], 3, 1.0).unwrap_err();
        assert!(matches!(err, Error::CoverageGap(1)));
        assert!(err.to_string().contains("coverage gap"));
    }

    #[test]
    fn scalar_offsets_clamp() {
        assert_eq!(scalar_chunk_offset(0, 1000, 600, 6), 0);
        assert_eq!(scalar_chunk_offset(50, 1000, 600, 6), 0);
        assert_eq!(scalar_chunk_offset(51, 1000, 600, 6), 6);
        assert_eq!(scalar_chunk_offset(166, 1000, 600, 6), 400);
        assert_eq!(scalar_chunk_offset(10, 200, 600, 6), 0);
    }

    #[test]
    fn contributor_profile_short_song() {
        assert_eq!(contributor_counts(100, 600, 30, 6).unwrap(), vec![1; 17]);
        let q = contributor_counts(660, 600, 30, 6).unwrap();
        assert_eq!(q.len(), 110);
        assert_eq!(q[0], 1);
        assert_eq!(q[5], 2);
        assert_eq!(q[109], 1);
    }
}

//! Fixed-size chunk extraction and label pooling onto the model output grid.

use std::borrow::Cow;

use ndarray::{s, Array2, CowArray, Ix2};

use crate::annotations::ActivationCurve;
use crate::error::{Error, Result};
use crate::features::{MelSpectrogram, LOG_FLOOR};

/// Chunk length in input frames (19.2 s).
pub const CHUNK_FRAMES: usize = 600;
/// Hop between training chunks.
pub const CHUNK_HOP: usize = 30;
/// Temporal pooling factor between the input grid and the output grid.
pub const LABEL_POOL: usize = 6;

#[derive(Debug, Clone)]
pub struct ChunkLabels<'a> {
    pub chorus: Cow<'a, [f64]>,
    pub boundary: Cow<'a, [f64]>,
}

/// A window of `n` frames of a song, padded past the song end when needed.
#[derive(Debug, Clone)]
pub struct Chunk<'a> {
    pub features: CowArray<'a, f64, Ix2>,
    pub labels: Option<ChunkLabels<'a>>,
    /// `false` for padded frames.
    pub mask: Vec<bool>,
    pub song_id: usize,
    pub offset: usize,
}

impl Chunk<'_> {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Median-pooled `(chorus, boundary)` labels; `None` for unlabeled chunks.
    pub fn pooled_labels(&self, pool: usize) -> Option<Result<(Vec<f64>, Vec<f64>)>> {
        self.labels.as_ref().map(|l| {
            Ok((
                median_pool_labels(&l.chorus, pool)?,
                median_pool_labels(&l.boundary, pool)?,
            ))
        })
    }

    /// A pooled frame is valid when the first input frame it covers is.
    pub fn pooled_mask(&self, pool: usize) -> Vec<bool> {
        self.mask.iter().step_by(pool).copied().collect()
    }
}

/// Chunk start offsets for a song of `len` frames.
///
/// Offsets advance by `hop` while the chunk fits. When `len - n` is not a
/// multiple of `hop`, one more chunk is anchored at the tail; `align` rounds
/// that tail offset up to a multiple of `align` (chunks then overrun the
/// song end by fewer than `align` padded frames). Songs shorter than `n` get
/// a single padded chunk at 0.
pub fn chunk_offsets(len: usize, n: usize, hop: usize, align: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::InvalidArgument("cannot chunk an empty song".into()));
    }
    if n == 0 || hop == 0 || align == 0 {
        return Err(Error::InvalidArgument(
            "chunk size, hop and alignment must be positive".into(),
        ));
    }
    if len <= n {
        return Ok(vec![0]);
    }
    let span = len - n;
    let mut offsets: Vec<usize> = (0..=span / hop).map(|i| i * hop).collect();
    if !span.is_multiple_of(hop) {
        offsets.push(span.div_ceil(align) * align);
    }
    Ok(offsets)
}

/// Slices song features and labels into chunks; the tail chunk is anchored exactly at `len - n`.
pub fn make_chunks<'a>(
    mel: &'a MelSpectrogram,
    chorus: &'a ActivationCurve,
    boundary: &'a ActivationCurve,
    n: usize,
    hop: usize,
) -> Result<Vec<Chunk<'a>>> {
    make_chunks_aligned(mel, Some((chorus, boundary)), n, hop, 1, 0)
}

/// General chunker: optional labels, tail offset aligned to `align` frames, chunks tagged with `song_id`.
pub fn make_chunks_aligned<'a>(
    mel: &'a MelSpectrogram,
    labels: Option<(&'a ActivationCurve, &'a ActivationCurve)>,
    n: usize,
    hop: usize,
    align: usize,
    song_id: usize,
) -> Result<Vec<Chunk<'a>>> {
    let len = mel.num_frames();
    if let Some((c, b)) = labels {
        if c.len() != len || b.len() != len {
            return Err(Error::ShapeMismatch {
                expected: format!("label curves of length {len}"),
                actual: format!("{} and {}", c.len(), b.len()),
            });
        }
    }
    chunk_offsets(len, n, hop, align)?
        .into_iter()
        .map(|offset| Ok(chunk_at(mel, labels, n, offset, song_id)))
        .collect()
}

/// The chunk of `n` frames starting at `offset`, padded with the log floor
/// (features) and zeros (labels) beyond the song end.
pub fn chunk_at<'a>(
    mel: &'a MelSpectrogram,
    labels: Option<(&'a ActivationCurve, &'a ActivationCurve)>,
    n: usize,
    offset: usize,
    song_id: usize,
) -> Chunk<'a> {
    let len = mel.num_frames();
    let end = (offset + n).min(len);
    let valid = end.saturating_sub(offset);
    let mask: Vec<bool> = (0..n).map(|i| i < valid).collect();
    if valid == n {
        return Chunk {
            features: mel.values.slice(s![offset..end, ..]).into(),
            labels: labels.map(|(c, b)| ChunkLabels {
                chorus: Cow::Borrowed(&c.values[offset..end]),
                boundary: Cow::Borrowed(&b.values[offset..end]),
            }),
            mask,
            song_id,
            offset,
        };
    }
    let mut features = Array2::from_elem((n, mel.n_mels()), LOG_FLOOR.ln());
    features
        .slice_mut(s![..valid, ..])
        .assign(&mel.values.slice(s![offset..end, ..]));
    let pad = |v: &[f64]| {
        let mut out = vec![0.0; n];
        out[..valid].copy_from_slice(&v[offset..end]);
        Cow::Owned(out)
    };
    Chunk {
        features: features.into(),
        labels: labels.map(|(c, b)| ChunkLabels {
            chorus: pad(&c.values),
            boundary: pad(&b.values),
        }),
        mask,
        song_id,
        offset,
    }
}

fn median(window: &[f64]) -> f64 {
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[m - 1] + sorted[m])
    } else {
        sorted[m]
    }
}

/// Non-overlapping median pooling; even windows take the mean of the two middle values.
pub fn median_pool_labels(v: &[f64], pool: usize) -> Result<Vec<f64>> {
    if pool == 0 || !v.len().is_multiple_of(pool) {
        return Err(Error::InvalidArgument(format!(
            "label length {} is not divisible by pool size {pool}",
            v.len()
        )));
    }
    Ok(v.chunks_exact(pool).map(median).collect())
}

/// Song-level pooling onto the output grid: the curve is zero-padded to a
/// multiple of `pool` (the same padding chunks use), giving `ceil(len / pool)` values.
pub fn pool_curve(curve: &ActivationCurve, pool: usize) -> ActivationCurve {
    let mut padded = curve.values.clone();
    padded.resize(curve.len().div_ceil(pool) * pool, 0.0);
    ActivationCurve::new(
        median_pool_labels(&padded, pool).expect("padded to a multiple"),
        curve.frame_rate / pool as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn fake_song(len: usize, seed: u64) -> (MelSpectrogram, ActivationCurve, ActivationCurve) {
        let mut rng = SplitMix64::new(seed);
        let values = Array2::from_shape_fn((len, 4), |_| rng.normal());
        let c = (0..len).map(|_| rng.next_f64()).collect();
        let b = (0..len).map(|_| rng.next_f64()).collect();
        (
            MelSpectrogram {
                values,
                frame_rate: 31.25,
            },
            ActivationCurve::new(c, 31.25),
            ActivationCurve::new(b, 31.25),
        )
    }

    #[test]
    fn offsets_examples() {
        assert_eq!(chunk_offsets(600, 600, 30, 1).unwrap(), vec![0]);
        assert_eq!(chunk_offsets(630, 600, 30, 1).unwrap(), vec![0, 30]);
        assert_eq!(chunk_offsets(615, 600, 30, 1).unwrap(), vec![0, 15]);
        assert_eq!(chunk_offsets(615, 600, 30, 6).unwrap(), vec![0, 18]);
        assert_eq!(chunk_offsets(100, 600, 30, 1).unwrap(), vec![0]);
        assert!(chunk_offsets(0, 600, 30, 1).is_err());
    }

    #[test]
    fn chunk_count_formula() {
        for len in 600..1500 {
            let offsets = chunk_offsets(len, 600, 30, 1).unwrap();
            let span = len - 600;
            let expected = span / 30 + 1 + usize::from(span % 30 != 0);
            assert_eq!(offsets.len(), expected);
            assert_eq!(*offsets.last().unwrap() + 600, len.max(600));
        }
    }

    #[test]
    fn chunks_are_exact_slices() {
        let (mel, c, b) = fake_song(700, 1);
        let chunks = make_chunks(&mel, &c, &b, 600, 30).unwrap();
        assert_eq!(chunks.len(), 5);
        for ch in &chunks {
            assert_eq!(
                ch.features,
                mel.values.slice(s![ch.offset..ch.offset + 600, ..])
            );
            let labels = ch.labels.as_ref().unwrap();
            assert_eq!(&labels.chorus[..], &c.values[ch.offset..ch.offset + 600]);
            assert!(ch.mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn short_song_is_padded() {
        let (mel, c, b) = fake_song(100, 2);
        let chunks = make_chunks(&mel, &c, &b, 600, 30).unwrap();
        assert_eq!(chunks.len(), 1);
        let ch = &chunks[0];
        assert_eq!(ch.features.dim(), (600, 4));
        assert_eq!(ch.mask.iter().filter(|&&m| m).count(), 100);
        assert_eq!(ch.features[[599, 0]], LOG_FLOOR.ln());
        assert_eq!(ch.labels.as_ref().unwrap().chorus[599], 0.0);
    }

    #[test]
    fn median_pool_examples() {
        assert_eq!(
            median_pool_labels(&[0., 0., 0., 1., 1., 1.], 6).unwrap(),
            vec![0.5]
        );
        assert_eq!(median_pool_labels(&[1.; 6], 6).unwrap(), vec![1.0]);
        assert_eq!(
            median_pool_labels(&[0., 0., 1., 1., 1., 1.], 6).unwrap(),
            vec![1.0]
        );
        assert!(median_pool_labels(&[0.; 7], 6).is_err());
    }

    #[test]
    fn pool_curve_pads_with_zero() {
        let c = ActivationCurve::new(vec![1.0; 8], 31.25);
        let p = pool_curve(&c, 6);
        assert_eq!(p.values, vec![1.0, 0.0]);
        assert!((p.frame_rate - 31.25 / 6.0).abs() < 1e-12);
    }
}

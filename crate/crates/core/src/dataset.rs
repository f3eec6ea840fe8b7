//! Songs with features and targets, training-set assembly and per-song evaluation.

use std::fs;

use crate::annotations::{
    boundary_curve, chorus_curve, normalize_chorus_labels, parse_annotations, ActivationCurve,
    SegmentList,
};
use crate::chunking::{make_chunks_aligned, pool_curve, Chunk, CHUNK_HOP, LABEL_POOL};
use crate::error::{Error, Result};
use crate::features::{features_from_waveform, MelExtractor, MelSpectrogram, Waveform};
use crate::inference::{predict, SongPrediction};
use crate::metrics::{curve_auc, pairwise_f1, SongScore};
use crate::network::{examples_from_chunks, Example, ModelConfig, ModelParams, Real, Variant};
use crate::postprocess::{binarize, oracle_bound, DatasetPrior, DetectionResult};
use crate::synthdata::{Manifest, ManifestEntry, Split};

/// A song ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Song {
    pub id: String,
    pub duration: f64,
    /// Annotations as given (any labels).
    pub annotations: SegmentList,
    /// Chorus-only, merged annotations.
    pub choruses: SegmentList,
    pub mel: MelSpectrogram,
    pub chorus_curve: ActivationCurve,
    pub boundary_curve: ActivationCurve,
}

impl Song {
    pub fn new(
        id: impl Into<String>,
        audio: &Waveform,
        annotations: SegmentList,
        extractor: &MelExtractor,
    ) -> Result<Self> {
        let mel = features_from_waveform(extractor, audio)?;
        let choruses = normalize_chorus_labels(&annotations);
        let n = mel.num_frames();
        Ok(Self {
            id: id.into(),
            duration: annotations.duration,
            chorus_curve: chorus_curve(&choruses, mel.frame_rate, n),
            boundary_curve: boundary_curve(&choruses, mel.frame_rate, n),
            annotations,
            choruses,
            mel,
        })
    }

    /// Reads the WAV / CSV pair of a manifest entry.
    pub fn load(entry: &ManifestEntry, extractor: &MelExtractor) -> Result<Self> {
        let audio = Waveform::read_wav(&entry.path_wav)?;
        let text =
            fs::read_to_string(&entry.path_csv).map_err(|e| Error::io(&entry.path_csv, e))?;
        let annotations = parse_annotations(&text, audio.duration().max(entry.duration_sec))?;
        Self::new(entry.song_id.clone(), &audio, annotations, extractor)
    }

    /// Training chunks at hop `hop` tagged with `song_index`.
    pub fn chunks(&self, n: usize, hop: usize, song_index: usize) -> Result<Vec<Chunk<'_>>> {
        make_chunks_aligned(
            &self.mel,
            Some((&self.chorus_curve, &self.boundary_curve)),
            n,
            hop,
            1,
            song_index,
        )
    }

    /// Reference curves on the model output grid.
    pub fn pooled_reference(&self) -> (ActivationCurve, ActivationCurve) {
        (
            pool_curve(&self.chorus_curve, LABEL_POOL),
            pool_curve(&self.boundary_curve, LABEL_POOL),
        )
    }
}

pub fn load_split(
    manifest: &Manifest,
    split: Split,
    extractor: &MelExtractor,
) -> Result<Vec<Song>> {
    manifest
        .split(split)
        .map(|e| Song::load(e, extractor))
        .collect()
}

/// Chunk hop used to build training data: dense (one output frame) for the
/// scalar variant, the standard hop for the temporal variant.
pub fn training_hop(variant: Variant) -> usize {
    match variant {
        Variant::Temporal => CHUNK_HOP,
        Variant::Scalar => LABEL_POOL,
    }
}

/// All training chunks of `songs` for `cfg`.
pub fn training_chunks<'a>(songs: &'a [Song], cfg: &ModelConfig) -> Result<Vec<Chunk<'a>>> {
    let hop = training_hop(cfg.variant);
    let mut out = Vec::new();
    for (i, s) in songs.iter().enumerate() {
        out.extend(s.chunks(cfg.n_frames, hop, i)?);
    }
    Ok(out)
}

pub fn training_examples<'a>(
    chunks: &'a [Chunk<'_>],
    cfg: &ModelConfig,
) -> Result<Vec<Example<'a>>> {
    examples_from_chunks(chunks, cfg)
}

/// Everything computed for one evaluated song.
#[derive(Debug, Clone)]
pub struct SongEvaluation {
    pub prediction: SongPrediction,
    pub detection: DetectionResult,
    pub oracle: DetectionResult,
    pub score: SongScore,
    pub oracle_f1: f64,
}

/// Predicts, decodes and scores one song.
pub fn evaluate_song<A: Real>(
    params: &ModelParams<A>,
    song: &Song,
    prior: DatasetPrior,
    eval_rate: f64,
) -> Result<SongEvaluation> {
    let prediction = predict(params, &song.mel)?;
    let detection = binarize(
        &prediction.chorus,
        &prediction.boundary,
        song.duration,
        prior,
    )?;
    let (ref_chorus, _) = song.pooled_reference();
    let auc = curve_auc(&prediction.chorus, &ref_chorus).ok();
    let (precision, recall, f1) = pairwise_f1(&detection.segments, &song.choruses, eval_rate)?;
    let oracle = oracle_bound(
        &prediction.chorus,
        &song.choruses.chorus_boundaries(),
        song.choruses.segments.len(),
        song.duration,
    )?;
    let (_, _, oracle_f1) = pairwise_f1(&oracle.segments, &song.choruses, eval_rate)?;
    Ok(SongEvaluation {
        prediction,
        detection,
        oracle,
        score: SongScore {
            song_id: song.id.clone(),
            auc,
            precision,
            recall,
            f1,
        },
        oracle_f1,
    })
}

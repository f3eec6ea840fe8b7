//! Seeded synthetic songs with verse/chorus structure.
//!
//! Each song follows `intro (verse chorus)+ [bridge] (verse)? chorus outro`.
//! Sections are rendered by additive synthesis of a per-kind timbre playing
//! a per-song melodic pattern; the chorus is the brightest and loudest
//! section (8 partials, noise floor, +6 dB over the verse). Section
//! boundaries fall on whole milliseconds so the 3-decimal annotation CSV is
//! exact to the sample.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::{Segment, SegmentList};
use crate::error::{Error, Result};
use crate::features::{Waveform, SAMPLE_RATE};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Intro,
    Verse,
    Chorus,
    Bridge,
    Outro,
}

impl SectionKind {
    pub fn label(self) -> &'static str {
        match self {
            SectionKind::Intro => "intro",
            SectionKind::Verse => "verse",
            SectionKind::Chorus => "chorus",
            SectionKind::Bridge => "bridge",
            SectionKind::Outro => "outro",
        }
    }
}

/// Additive timbre: relative partial amplitudes (index = harmonic number - 1),
/// linear gain, noise level relative to the gain, and register shift in octaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Timbre {
    pub partials: Vec<f64>,
    pub gain: f64,
    pub noise: f64,
    pub octave: i32,
}

impl Timbre {
    /// Bright, loud chorus: 8 partials plus noise, +6 dB over the verse.
    pub fn chorus() -> Self {
        Self {
            partials: (1..=8).map(|k| 1.0 / (k as f64).powf(0.7)).collect(),
            gain: 2.0 * Self::verse().gain,
            noise: 0.08,
            octave: 1,
        }
    }

    pub fn verse() -> Self {
        Self {
            partials: vec![1.0, 0.5, 0.33],
            gain: 0.25,
            noise: 0.01,
            octave: 0,
        }
    }

    /// Soft, hollow pad: odd harmonics only.
    pub fn intro() -> Self {
        Self {
            partials: vec![1.0, 0.0, 0.3],
            gain: 0.18,
            noise: 0.0,
            octave: -1,
        }
    }

    pub fn bridge() -> Self {
        Self {
            partials: vec![1.0, 0.0, 0.5, 0.0, 0.35, 0.0, 0.25],
            gain: 0.22,
            noise: 0.02,
            octave: 0,
        }
    }

    pub fn outro() -> Self {
        Self {
            partials: vec![0.6, 1.0, 0.0, 0.4],
            gain: 0.16,
            noise: 0.0,
            octave: -1,
        }
    }

    pub fn for_kind(kind: SectionKind) -> Self {
        match kind {
            SectionKind::Intro => Self::intro(),
            SectionKind::Verse => Self::verse(),
            SectionKind::Chorus => Self::chorus(),
            SectionKind::Bridge => Self::bridge(),
            SectionKind::Outro => Self::outro(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_songs: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub min_section: f64,
    pub max_section: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Probability of a second `(verse chorus)` repetition.
    pub repeat_prob: f64,
    pub bridge_prob: f64,
    pub late_verse_prob: f64,
    /// Relative per-note amplitude jitter (standard deviation).
    pub jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_songs: 200,
            min_duration: 60.0,
            max_duration: 100.0,
            min_section: 8.0,
            max_section: 25.0,
            sample_rate: SAMPLE_RATE,
            seed: 42,
            repeat_prob: 0.1,
            bridge_prob: 0.4,
            late_verse_prob: 0.4,
            jitter: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_duration > 0.0
            && self.max_duration >= self.min_duration
            && self.min_section > 0.0
            && self.max_section >= self.min_section
            && self.sample_rate > 0
            && [self.repeat_prob, self.bridge_prob, self.late_verse_prob]
                .iter()
                .all(|p| (0.0..=1.0).contains(p))
            && self.jitter >= 0.0;
        // The shortest structure has five sections, the longest eight.
        if !ok
            || 5.0 * self.min_section > self.max_duration
            || 5.0 * self.max_section < self.min_duration
        {
            return Err(Error::InvalidArgument("inconsistent synthesis spec".into()));
        }
        Ok(())
    }
}

/// Section sequence and durations (seconds, whole milliseconds) of a song.
pub fn draw_structure(spec: &SynthSpec, rng: &mut SplitMix64) -> (Vec<SectionKind>, Vec<f64>) {
    use SectionKind::*;
    loop {
        let duration =
            (rng.uniform(spec.min_duration, spec.max_duration) * 1000.0).round() / 1000.0;
        let mut kinds = vec![Intro, Verse, Chorus];
        if rng.next_f64() < spec.repeat_prob {
            kinds.extend([Verse, Chorus]);
        }
        if rng.next_f64() < spec.bridge_prob {
            kinds.push(Bridge);
        }
        if rng.next_f64() < spec.late_verse_prob {
            kinds.push(Verse);
        }
        kinds.extend([Chorus, Outro]);
        let k = kinds.len() as f64;
        if k * spec.min_section > duration || k * spec.max_section < duration {
            continue;
        }
        for _ in 0..200 {
            let raw: Vec<f64> = (0..kinds.len())
                .map(|_| rng.uniform(spec.min_section, spec.max_section))
                .collect();
            let scale = duration / raw.iter().sum::<f64>();
            // Snap cumulative boundaries to milliseconds; the last one is the duration.
            let mut edges = vec![0.0];
            let mut acc = 0.0;
            for r in &raw[..raw.len() - 1] {
                acc += r * scale;
                edges.push((acc * 1000.0).round() / 1000.0);
            }
            edges.push(duration);
            let lens: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
            if lens
                .iter()
                .all(|&l| l >= spec.min_section - 1e-9 && l <= spec.max_section + 1e-9)
            {
                return (kinds, lens);
            }
        }
    }
}

/// Song-level musical material shared by all sections.
struct Material {
    root_hz: f64,
    note_seconds: f64,
    /// Scale-degree patterns (semitones above the root), one per section kind.
    patterns: [Vec<i32>; 5],
}

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

fn kind_slot(kind: SectionKind) -> usize {
    kind as usize
}

fn draw_material(rng: &mut SplitMix64) -> Material {
    let root_hz = 110.0 * 2f64.powf(rng.next_f64());
    let note_seconds = rng.uniform(0.25, 0.5);
    let mut pattern =
        |len: usize| -> Vec<i32> { (0..len).map(|_| MAJOR[rng.below(7) as usize]).collect() };
    let patterns = [pattern(4), pattern(8), pattern(8), pattern(6), pattern(4)];
    Material {
        root_hz,
        note_seconds,
        patterns,
    }
}

/// Renders `[start, end)` (samples) of one section into `out`.
fn render_section(
    out: &mut [f32],
    sr: f64,
    kind: SectionKind,
    material: &Material,
    jitter: f64,
    rng: &mut SplitMix64,
) {
    let timbre = Timbre::for_kind(kind);
    let pattern = &material.patterns[kind_slot(kind)];
    let note_len = ((material.note_seconds * sr) as usize).max(1);
    let fade = ((0.01 * sr) as usize).max(1) as f64;
    for (n, note) in out.chunks_mut(note_len).enumerate() {
        let semis = pattern[n % pattern.len()] + 12 * timbre.octave;
        let f0 = material.root_hz * 2f64.powf(semis as f64 / 12.0);
        let amp = timbre.gain * (1.0 + jitter * rng.normal()).clamp(0.5, 1.5);
        // Per-partial phasors advanced by complex rotation.
        let mut osc: Vec<(f64, f64, f64, f64, f64)> = timbre
            .partials
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .filter_map(|(k, &a)| {
                let f = f0 * (k + 1) as f64;
                (f < 0.45 * sr).then(|| {
                    let w = 2.0 * PI * f / sr;
                    let phase = 2.0 * PI * rng.next_f64();
                    (phase.cos(), phase.sin(), w.cos(), w.sin(), a)
                })
            })
            .collect();
        let len = note.len();
        for (i, s) in note.iter_mut().enumerate() {
            let env = (i.min(len - i) as f64 / fade).min(1.0);
            let mut v = 0.0;
            for o in osc.iter_mut() {
                v += o.4 * o.1;
                let (c, sn) = (o.0 * o.2 - o.1 * o.3, o.0 * o.3 + o.1 * o.2);
                o.0 = c;
                o.1 = sn;
            }
            let noise = timbre.noise * (2.0 * rng.next_f64() - 1.0);
            *s = (amp * (env * v + noise)) as f32;
        }
    }
}

/// Annotations of song `index` without rendering audio (identical to those
/// returned by [`generate_song`]).
pub fn generate_annotations(spec: &SynthSpec, index: usize) -> Result<SegmentList> {
    spec.validate()?;
    let mut rng = SplitMix64::for_stream(spec.seed, index as u64);
    let (kinds, lens) = draw_structure(spec, &mut rng);
    annotations_for(&kinds, &lens)
}

fn annotations_for(kinds: &[SectionKind], lens: &[f64]) -> Result<SegmentList> {
    let ms = |x: f64| (x * 1000.0).round() / 1000.0;
    let duration = ms(lens.iter().sum());
    let mut segments = Vec::with_capacity(kinds.len());
    let (mut acc, mut t) = (0.0, 0.0);
    for (i, (&kind, &len)) in kinds.iter().zip(lens).enumerate() {
        acc += len;
        let end = if i + 1 == kinds.len() {
            duration
        } else {
            ms(acc)
        };
        segments.push(Segment::new(t, end, kind.label()));
        t = end;
    }
    SegmentList::new(segments, duration)
}

/// Deterministic song `index` of the corpus described by `spec`.
pub fn generate_song(spec: &SynthSpec, index: usize) -> Result<(Waveform, SegmentList)> {
    spec.validate()?;
    let mut rng = SplitMix64::for_stream(spec.seed, index as u64);
    let (kinds, lens) = draw_structure(spec, &mut rng);
    let material = draw_material(&mut rng);
    let sr = spec.sample_rate as f64;
    let annotations = annotations_for(&kinds, &lens)?;
    let total = (lens.iter().sum::<f64>() * sr).round() as usize;
    let mut samples = vec![0.0f32; total];
    for (seg, &kind) in annotations.segments.iter().zip(&kinds) {
        let (a, b) = (
            (seg.start * sr).round() as usize,
            ((seg.end * sr).round() as usize).min(total),
        );
        render_section(
            &mut samples[a..b],
            sr,
            kind,
            &material,
            spec.jitter,
            &mut rng,
        );
    }
    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 0.9 {
        let g = 0.9 / peak;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    Ok((Waveform::new(samples, spec.sample_rate)?, annotations))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub song_id: String,
    pub path_wav: PathBuf,
    pub path_csv: PathBuf,
    pub duration_sec: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Writes `song_id,path_wav,path_csv,duration_sec,split`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            w.serialize(e).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; relative paths resolve against the manifest's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let mut e: ManifestEntry = row.map_err(|e| csv_error(path, e))?;
            e.path_wav = base.join(&e.path_wav);
            e.path_csv = base.join(&e.path_csv);
            entries.push(e);
        }
        Ok(Self { entries })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Split assignment: a seeded permutation of song indices, cut 70/10/20.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::for_stream(seed, u64::MAX).shuffle(&mut order);
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

pub fn song_id(index: usize) -> String {
    format!("song_{index:04}")
}

/// Writes `song_XXXX.wav` / `song_XXXX.csv` pairs and `manifest.csv` into `dir`.
pub fn generate_corpus(spec: &SynthSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let splits = assign_splits(spec.num_songs, spec.seed);
    let mut entries = Vec::with_capacity(spec.num_songs);
    for (i, &split) in splits.iter().enumerate() {
        let (wave, segments) = generate_song(spec, i)?;
        let id = song_id(i);
        let (wav_name, csv_name) = (format!("{id}.wav"), format!("{id}.csv"));
        wave.write_wav(dir.join(&wav_name))?;
        let csv_path = dir.join(&csv_name);
        fs::write(&csv_path, segments.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        entries.push(ManifestEntry {
            song_id: id,
            path_wav: wav_name.into(),
            path_csv: csv_name.into(),
            duration_sec: segments.duration,
            split,
        });
    }
    let manifest = Manifest { entries };
    manifest.write(&dir.join("manifest.csv"))?;
    Manifest::read(&dir.join("manifest.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_tiles_duration() {
        let spec = SynthSpec::default();
        for i in 0..50 {
            let mut rng = SplitMix64::for_stream(spec.seed, i);
            let (kinds, lens) = draw_structure(&spec, &mut rng);
            let total: f64 = lens.iter().sum();
            assert!((spec.min_duration..=spec.max_duration + 1e-9).contains(&total));
            assert!(lens.iter().all(|&l| (7.999..=25.001).contains(&l)));
            assert_eq!(kinds[0], SectionKind::Intro);
            assert_eq!(*kinds.last().unwrap(), SectionKind::Outro);
            assert!(kinds.contains(&SectionKind::Chorus));
        }
    }

    #[test]
    fn split_counts() {
        let s = assign_splits(200, 42);
        let count = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (140, 20, 40)
        );
    }

    #[test]
    fn chorus_is_louder_than_verse() {
        let mut spec = SynthSpec::default();
        spec.min_duration = 60.0;
        spec.max_duration = 60.0;
        let (w, s) = generate_song(&spec, 3).unwrap();
        let energy = |label: &str| {
            let (mut e, mut n) = (0.0f64, 0usize);
            for seg in s.segments.iter().filter(|x| x.label == label) {
                let a = (seg.start * 32000.0) as usize;
                let b = (seg.end * 32000.0) as usize;
                e += w.samples[a..b]
                    .iter()
                    .map(|&x| (x as f64).powi(2))
                    .sum::<f64>();
                n += b - a;
            }
            e / n as f64
        };
        assert!(energy("chorus") > 2.0 * energy("verse"));
    }
}

//! Audio ingestion and log-mel feature extraction.
//!
//! Features follow the model's fixed front-end configuration: 32 kHz mono
//! audio, 2048-sample Hann-windowed STFT with a 1024-sample hop, 96 Slaney
//! mel bands and a natural-log compression with a `1e-10` floor. The frame
//! rate is therefore 31.25 frames per second.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 32_000;
pub const FFT_SIZE: usize = 2048;
pub const HOP_SIZE: usize = 1024;
pub const N_MELS: usize = 96;
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample value".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a PCM 16-bit or 32-bit float WAV file, downmixing all channels by averaging.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::Wav(other),
        })?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .collect::<std::result::Result<_, _>>()?,
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<std::result::Result<_, _>>()?,
            (fmt, bits) => {
                return Err(Error::InvalidArgument(format!(
                    "unsupported WAV encoding {fmt:?} {bits}-bit (expected PCM16 or float32)"
                )))
            }
        };
        let samples = interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit PCM mono.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zero crossings of the interpolation kernel on each side (at the lower rate).
const RESAMPLE_ZEROS: f64 = 32.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The cutoff sits at the lower of the two Nyquist frequencies; output length
/// is `round(len * target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument(
            "target rate must be positive".into(),
        ));
    }
    if w.samples.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }
    let src = w.sample_rate as f64;
    let dst = target_rate as f64;
    let len = w.samples.len();
    let out_len = ((len as u64 * target_rate as u64 + w.sample_rate as u64 / 2)
        / w.sample_rate as u64) as usize;
    let cutoff = (dst / src).min(1.0);
    let half_width = RESAMPLE_ZEROS / cutoff;
    let step = src / dst;

    let out = (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(len - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let d = t - k as f64;
                let window = 0.5 * (1.0 + (PI * d / half_width).cos());
                acc += w.samples[k] as f64 * cutoff * sinc(cutoff * d) * window;
            }
            acc as f32
        })
        .collect();
    Waveform::new(out, target_rate)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Center frequencies (Hz) of the `n_mels` filters spanning 0 Hz to Nyquist.
pub fn mel_center_frequencies(sample_rate: u32, n_mels: usize) -> Vec<f64> {
    let edges = mel_edges(sample_rate, n_mels);
    edges[1..=n_mels].to_vec()
}

fn mel_edges(sample_rate: u32, n_mels: usize) -> Vec<f64> {
    let max_mel = hz_to_mel(sample_rate as f64 / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Slaney-style triangular mel filterbank with area normalization, shape `(n_mels, fft_size/2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, fft_size: usize, n_mels: usize) -> Result<Array2<f64>> {
    if n_mels == 0 {
        return Err(Error::InvalidArgument(
            "mel band count must be at least 1".into(),
        ));
    }
    if !fft_size.is_power_of_two() || fft_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "fft size {fft_size} is not a power of two"
        )));
    }
    let n_bins = fft_size / 2 + 1;
    if n_mels > n_bins {
        return Err(Error::InvalidArgument(format!(
            "{n_mels} mel bands exceed {n_bins} frequency bins"
        )));
    }
    let edges = mel_edges(sample_rate, n_mels);
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            let w = rise.min(fall).max(0.0);
            fb[[m, k]] = w * norm;
        }
        if fb.row(m).sum() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mel band {m} is narrower than one frequency bin"
            )));
        }
    }
    Ok(fb)
}

/// Log-mel matrix of shape `(frames, n_mels)` on a uniform frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub frame_rate: f64,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// One row per frame, comma-separated.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.values.axis_iter(Axis(0)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Precomputed STFT + filterbank state for the fixed feature configuration.
pub struct MelExtractor {
    filterbank: Array2<f64>,
    // Non-zero column range per mel row.
    supports: Vec<(usize, usize)>,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let filterbank =
            mel_filterbank(SAMPLE_RATE, FFT_SIZE, N_MELS).expect("static config is valid");
        let supports = filterbank
            .axis_iter(Axis(0))
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, last + 1)
            })
            .collect();
        // Periodic Hann.
        let window = (0..FFT_SIZE)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FFT_SIZE as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self {
            filterbank,
            supports,
            window,
            fft,
        }
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    /// Log-mel spectrogram of a 32 kHz waveform; `floor(len / hop)` frames,
    /// with the signal tail reflected so the last window is complete.
    pub fn log_mel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "expected {SAMPLE_RATE} Hz audio, got {} Hz (resample first)",
                w.sample_rate
            )));
        }
        let len = w.samples.len();
        if len < HOP_SIZE {
            return Err(Error::AudioTooShort {
                samples: len,
                needed: HOP_SIZE,
            });
        }
        let n_frames = len / HOP_SIZE;
        let n_bins = FFT_SIZE / 2 + 1;
        let mut values = Array2::zeros((n_frames, N_MELS));
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        let period = 2 * (len - 1).max(1);
        for (frame, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
            let start = frame * HOP_SIZE;
            for (n, slot) in buf.iter_mut().enumerate() {
                let mut i = (start + n) % period;
                if i >= len {
                    i = period - i;
                }
                *slot = Complex::new(w.samples[i] as f64 * self.window[n], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr();
            }
            for (m, cell) in row.iter_mut().enumerate() {
                let (lo, hi) = self.supports[m];
                let weights = self.filterbank.row(m);
                let mut e = 0.0;
                for k in lo..hi {
                    e += weights[k] * power[k];
                }
                *cell = (e + LOG_FLOOR).ln();
            }
        }
        Ok(MelSpectrogram {
            values,
            frame_rate: SAMPLE_RATE as f64 / HOP_SIZE as f64,
        })
    }
}

/// Convenience wrapper building a fresh [`MelExtractor`].
pub fn log_mel(w: &Waveform) -> Result<MelSpectrogram> {
    MelExtractor::new().log_mel(w)
}

/// Resamples to 32 kHz when needed, then extracts log-mel features.
pub fn features_from_waveform(extractor: &MelExtractor, w: &Waveform) -> Result<MelSpectrogram> {
    if w.sample_rate == SAMPLE_RATE {
        extractor.log_mel(w)
    } else {
        extractor.log_mel(&resample(w, SAMPLE_RATE)?)
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use chorusnet::annotations::{normalize_chorus_labels, parse_annotations, SegmentList};
use chorusnet::dataset::{evaluate_song, training_chunks, Song};
use chorusnet::features::{MelExtractor, Waveform};
use chorusnet::inference::{predict, write_activations};
use chorusnet::metrics::{auc, pairwise_f1, sample_labels, write_report, SongScore, EVAL_RATE};
use chorusnet::network::{
    read_checkpoint, save_checkpoint, train_with, ModelConfig, ModelParams, Variant,
};
use chorusnet::postprocess::{binarize, compute_theta, DatasetPrior};
use chorusnet::synthdata::{generate_corpus, Manifest, Split, SynthSpec};

mod files;

use files::{paired_inputs, stem, write_atomic};

#[derive(Parser)]
#[command(name = "chorusnet", version, about = "Supervised chorus detection")]
struct Cli {
    /// Optional TOML file with default option values; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (WAV + annotation CSV pairs and manifest.csv).
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Write song-level activation curves (CSV) for each input song.
    Infer(InferArgs),
    /// Score detections or a checkpoint against reference annotations.
    Eval(EvalArgs),
    /// Audio in, chorus segments out.
    Detect(DetectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_songs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus manifest; its train split is used.
    #[arg(long, conflicts_with_all = ["audio", "annotations"])]
    manifest: Option<PathBuf>,
    /// WAV file or directory (paired with --annotations by file stem).
    #[arg(long, requires = "annotations")]
    audio: Option<PathBuf>,
    /// Annotation CSV file or directory.
    #[arg(long, requires = "audio")]
    annotations: Option<PathBuf>,
    /// Checkpoint path; the loss log goes to `<out>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Override the chorus prior stored in the checkpoint.
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// WAV file or directory of WAV files.
    #[arg(long)]
    audio: PathBuf,
    /// Output CSV (single input) or directory (one `<stem>.csv` per song).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference annotation CSV file or directory.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Detection CSV file or directory, paired with references by file stem.
    #[arg(long, requires = "annotations")]
    estimates: Option<PathBuf>,
    /// Evaluate a checkpoint on a manifest split instead of detection files.
    #[arg(long, requires = "manifest", conflicts_with = "estimates")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    theta: Option<f64>,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    eval_rate: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Chorus prior (choruses per 3 minutes); defaults to the checkpoint's.
    #[arg(long)]
    theta: Option<f64>,
    /// Expected variant; loading a checkpoint of the other variant fails.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum VariantArg {
    Temporal,
    Scalar,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Temporal => Variant::Temporal,
            VariantArg::Scalar => Variant::Scalar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    variant: Option<VariantArg>,
    alpha: Option<f64>,
    seed: Option<u64>,
    steps: Option<u64>,
    batch: Option<usize>,
    lr0: Option<f64>,
    theta: Option<f64>,
    eval_rate: Option<f64>,
    num_songs: Option<usize>,
}

impl std::fmt::Debug for VariantArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", Variant::from(*self))
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Detect(a) => cmd_detect(a, &cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(a: SynthArgs, cfg: &FileConfig) -> Result<()> {
    let mut spec = SynthSpec::default();
    if let Some(seed) = a.seed.or(cfg.seed) {
        spec.seed = seed;
    }
    if let Some(n) = a.num_songs.or(cfg.num_songs) {
        spec.num_songs = n;
    }
    let manifest = generate_corpus(&spec, &a.out)?;
    eprintln!(
        "wrote {} songs to {}",
        manifest.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn read_annotations(path: &Path, duration: f64) -> Result<SegmentList> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_annotations(&text, duration).with_context(|| format!("in {}", path.display()))
}

fn load_songs(pairs: &[(String, PathBuf, PathBuf)], extractor: &MelExtractor) -> Result<Vec<Song>> {
    files::parallel_map(pairs, |(id, wav, csv)| {
        let audio =
            Waveform::read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
        let ann = read_annotations(csv, audio.duration())?;
        Ok(Song::new(id.clone(), &audio, ann, extractor)?)
    })
}

fn cmd_train(a: TrainArgs, cfg: &FileConfig) -> Result<()> {
    let variant: Variant = a
        .variant
        .or(cfg.variant)
        .unwrap_or(VariantArg::Temporal)
        .into();
    let mut model = ModelConfig::new(variant);
    if let Some(alpha) = a.alpha.or(cfg.alpha) {
        model.alpha = alpha;
    }
    if let Some(seed) = a.seed.or(cfg.seed) {
        model.seed = seed;
    }
    if let Some(batch) = a.batch.or(cfg.batch) {
        model.batch_size = batch;
    }
    if let Some(lr0) = cfg.lr0 {
        model.lr0 = lr0;
    }
    model.validate()?;
    let steps = a.steps.or(cfg.steps).unwrap_or(5000);

    let pairs = match (&a.manifest, &a.audio, &a.annotations) {
        (Some(m), _, _) => Manifest::read(m)?
            .split(Split::Train)
            .map(|e| (e.song_id.clone(), e.path_wav.clone(), e.path_csv.clone()))
            .collect(),
        (None, Some(audio), Some(ann)) => paired_inputs(audio, ann)?,
        _ => bail!("give either --manifest or both --audio and --annotations"),
    };
    if pairs.is_empty() {
        bail!("no training songs found");
    }
    let extractor = MelExtractor::new();
    let songs = load_songs(&pairs, &extractor)?;
    let theta = match a.theta.or(cfg.theta) {
        Some(t) => DatasetPrior::new(t)?.theta,
        None => {
            compute_theta(
                &songs
                    .iter()
                    .map(|s| s.annotations.clone())
                    .collect::<Vec<_>>(),
            )?
            .theta
        }
    };
    let chunks = training_chunks(&songs, &model)?;
    eprintln!(
        "training {variant} model on {} songs ({} chunks) for {steps} steps",
        songs.len(),
        chunks.len()
    );
    let mut window = 0.0;
    let outcome = train_with(&chunks, &model, steps, |step, loss| {
        window += loss;
        if step % 100 == 0 {
            eprintln!("step {step:>6}  loss {:.5}", window / 100.0);
            window = 0.0;
        }
    })?;
    let mut params = outcome.params;
    params.theta = Some(theta);
    write_atomic(&a.out, &save_checkpoint(&params)?)?;
    let mut log = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        log.push_str(&format!("{},{l:.6}\n", i + 1));
    }
    write_atomic(&loss_log_path(&a.out), log.as_bytes())?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn loss_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".loss.csv");
    PathBuf::from(name)
}

fn wav_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let files = files::list_with_extension(path, "wav")?;
        if files.is_empty() {
            bail!("no .wav files in {}", path.display());
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let inputs = wav_inputs(&a.audio)?;
    let single = !a.audio.is_dir();
    if !single {
        std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    }
    let extractor = MelExtractor::new();
    files::parallel_map(&inputs, |wav| {
        let audio =
            Waveform::read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
        let mel = chorusnet::features::features_from_waveform(&extractor, &audio)?;
        let pred = predict(&params, &mel)?;
        let mut buf = Vec::new();
        write_activations(&pred, &mut buf)?;
        let target = if single {
            a.out.clone()
        } else {
            a.out.join(format!("{}.csv", stem(wav)))
        };
        write_atomic(&target, &buf)
    })?;
    Ok(())
}

fn prior_for(theta: Option<f64>, params: &ModelParams) -> Result<DatasetPrior> {
    match theta.or(params.theta) {
        Some(t) => Ok(DatasetPrior::new(t)?),
        None => bail!("checkpoint carries no chorus prior; pass --theta"),
    }
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let rate = a.eval_rate.or(cfg.eval_rate).unwrap_or(EVAL_RATE);
    let rows = if let Some(ckpt) = &a.checkpoint {
        let params = read_checkpoint(ckpt)?;
        let prior = prior_for(a.theta.or(cfg.theta), &params)?;
        let manifest = Manifest::read(a.manifest.as_deref().expect("clap enforces --manifest"))?;
        let pairs: Vec<_> = manifest
            .split(a.split.into())
            .map(|e| (e.song_id.clone(), e.path_wav.clone(), e.path_csv.clone()))
            .collect();
        let extractor = MelExtractor::new();
        files::parallel_map(&pairs, |(id, wav, csv)| {
            let audio = Waveform::read_wav(wav)?;
            let song = Song::new(
                id.clone(),
                &audio,
                read_annotations(csv, audio.duration())?,
                &extractor,
            )?;
            Ok(evaluate_song(&params, &song, prior, rate)?.score)
        })?
    } else {
        let (Some(refs), Some(ests)) = (&a.annotations, &a.estimates) else {
            bail!("give --annotations with --estimates, or --checkpoint with --manifest");
        };
        let durations = match &a.manifest {
            Some(m) => Manifest::read(m)?
                .entries
                .into_iter()
                .map(|e| (e.song_id, e.duration_sec))
                .collect(),
            None => std::collections::HashMap::new(),
        };
        files::parallel_map(&paired_inputs(ests, refs)?, |(id, est, reference)| {
            score_files(id, est, reference, durations.get(id).copied(), rate)
        })?
    };
    let mut buf = Vec::new();
    write_report(&rows, &mut buf)?;
    write_atomic(&a.out, &buf)
}

/// Without a known duration, the later of the two files' last segment ends is used.
fn score_files(
    id: &str,
    est: &Path,
    reference: &Path,
    duration: Option<f64>,
    rate: f64,
) -> Result<SongScore> {
    let span = |p: &Path| -> Result<f64> {
        Ok(read_annotations(p, f64::MAX)?
            .segments
            .iter()
            .map(|s| s.end)
            .fold(0.0, f64::max))
    };
    let d = match duration {
        Some(d) => d,
        None => span(est)?.max(span(reference)?),
    };
    let r = normalize_chorus_labels(&read_annotations(reference, d)?);
    let e = normalize_chorus_labels(&read_annotations(est, d)?);
    let (precision, recall, f1) = pairwise_f1(&e, &r, rate)?;
    let est_curve: Vec<f64> = sample_labels(&e, rate).into_iter().map(f64::from).collect();
    let auc = auc(&est_curve, &sample_labels(&r, rate)).ok();
    Ok(SongScore {
        song_id: id.to_string(),
        auc,
        precision,
        recall,
        f1,
    })
}

fn cmd_detect(a: DetectArgs, cfg: &FileConfig) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    if let Some(v) = a.variant.or(cfg.variant) {
        let v = Variant::from(v);
        if params.variant() != v {
            bail!(
                "checkpoint holds a {} model, expected {v}",
                params.variant()
            );
        }
    }
    let prior = prior_for(a.theta.or(cfg.theta), &params)?;
    let audio =
        Waveform::read_wav(&a.audio).with_context(|| format!("reading {}", a.audio.display()))?;
    let mel = chorusnet::features::features_from_waveform(&MelExtractor::new(), &audio)?;
    let pred = predict(&params, &mel)?;
    let detection = binarize(&pred.chorus, &pred.boundary, audio.duration(), prior)?;
    let text = match a.format {
        Format::Csv => detection.to_csv(),
        Format::Json => detection.to_json(),
    };
    write_atomic(&a.out, text.as_bytes())
}

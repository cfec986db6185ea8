//! Subcommand definitions and their implementations.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fadernets::corpus::{ingest_jsonl, keep_labelled_fraction, records_from_midi, split, synth_corpus, write_jsonl, SynthParams};
use fadernets::eval::{evaluate, fader_sweep, project_latents, EvalOptions, EvalReport, ProjectedPoint};
use fadernets::model::checkpoint::{self, write_atomic};
use fadernets::model::{encode_records, train_with};
use fadernets::transfer::transfer;
use fadernets::{CorpusRecord, Feature, ModelConfig, ModelMode};
use serde::Serialize;

use crate::service::{self, AppState, Loaded};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{name}: {source}", name = source.name())]
    Data {
        #[from]
        source: fadernets::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        fadernets::Error::from(e).into()
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "faders",
    version,
    about = "Train, evaluate and serve fader models for symbolic music"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a JSONL corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a model and write a checkpoint plus its loss curve.
    Train(TrainArgs),
    /// Score fader control on the test split; prints an EvalReport as JSON.
    Eval(EvalArgs),
    /// Slide one fader over test segments and report output densities.
    Sweep(SweepArgs),
    /// Shift segments toward an arousal class.
    Transfer(TransferArgs),
    /// Project test-split latents onto two principal axes.
    Project(ProjectArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Generate the synthetic arousal corpus.
    Synth(SynthArgs),
    /// Convert MIDI files (or directories of them) and JSONL corpora.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub labelled_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// `.mid`/`.midi` files, `.jsonl` corpora, or directories holding them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Arousal in `[-1, 1]` applied to every MIDI segment.
    #[arg(long, allow_hyphen_values = true)]
    pub arousal: Option<f64>,
    /// CSV with `file,arousal` columns giving per-file arousal for MIDI inputs.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON model config; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub mode: Option<ModelMode>,
    /// Overrides the configured number of optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Train without the latent regularization loss.
    #[arg(long)]
    pub no_reg: bool,
    /// Keep arousal labels on at most this fraction of training records.
    #[arg(long)]
    pub labelled_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the train/validation/test split; defaults to `--seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Fader positions per sweep.
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Test segments per sweep.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Repeat with sweep seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// Also write the reports as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub feature: Feature,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL segments to transfer.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: usize,
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    /// JSONL results; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Project one feature's latent; both latents concatenated when absent.
    #[arg(long)]
    pub feature: Option<Feature>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint to load at start; requests get 409 until one is loaded.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Corpus(CorpusCommand::Synth(a)) => corpus_synth(a),
        Command::Corpus(CorpusCommand::Ingest(a)) => corpus_ingest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Project(a) => project(a),
        Command::Serve(a) => serve(a),
    }
}

fn jsonl_bytes(records: &[CorpusRecord]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf)?;
    Ok(buf)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(path) => write_atomic(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn pretty_json(value: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(fadernets::Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn load_corpus(path: &Path) -> CliResult<Vec<CorpusRecord>> {
    let ingested = ingest_jsonl(path)?;
    if ingested.skipped > 0 {
        log::warn!("{}: skipped {} over-long segments", path.display(), ingested.skipped);
    }
    Ok(ingested.records)
}

fn test_split(corpus: &Path, seed: u64) -> CliResult<Vec<CorpusRecord>> {
    Ok(split(&load_corpus(corpus)?, seed)?.test)
}

fn corpus_synth(a: SynthArgs) -> CliResult {
    let records = synth_corpus(SynthParams {
        n_segments: a.n,
        labelled_fraction: a.labelled_fraction,
        seed: a.seed,
    })?;
    write_atomic(&a.out, &jsonl_bytes(&records)?)?;
    log::info!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn is_midi(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("mid" | "midi" | "MID" | "MIDI")
    )
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("jsonl")
}

fn collect_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            found.retain(|p| is_midi(p) || is_jsonl(p));
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn read_labels(path: &Path) -> CliResult<HashMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(fadernets::Error::from)?;
    let mut labels = HashMap::new();
    for (i, row) in reader.deserialize::<(String, f64)>().enumerate() {
        let (file, arousal) = row.map_err(|e| fadernets::Error::ParseError {
            line: i + 2,
            detail: e.to_string(),
        })?;
        labels.insert(file, arousal);
    }
    Ok(labels)
}

fn corpus_ingest(a: IngestArgs) -> CliResult {
    if a.arousal.is_some() && a.labels.is_some() {
        return Err(CliError::Usage("--arousal and --labels are mutually exclusive".into()));
    }
    let labels = a.labels.as_deref().map(read_labels).transpose()?.unwrap_or_default();
    let mut records = Vec::new();
    let mut skipped = 0;
    for path in collect_inputs(&a.inputs)? {
        let ingested = if is_jsonl(&path) {
            ingest_jsonl(&path)?
        } else if is_midi(&path) {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let arousal = a.arousal.or_else(|| labels.get(&name).copied());
            records_from_midi(&fs::read(&path)?, arousal)?
        } else {
            return Err(CliError::Usage(format!("{}: expected .mid, .midi or .jsonl", path.display())));
        };
        skipped += ingested.skipped;
        records.extend(ingested.records);
    }
    write_atomic(&a.out, &jsonl_bytes(&records)?)?;
    log::info!(
        "wrote {} records to {} ({skipped} over-long segments skipped)",
        records.len(),
        a.out.display()
    );
    Ok(())
}

fn read_config(path: &Path) -> CliResult<ModelConfig> {
    let config: ModelConfig = serde_json::from_slice(&fs::read(path)?).map_err(fadernets::Error::from)?;
    Ok(config)
}

fn train(a: TrainArgs) -> CliResult {
    let mut config = match &a.config {
        Some(path) => read_config(path)?,
        None => match a.preset {
            Preset::Desk => ModelConfig::desk(),
            Preset::Paper => ModelConfig::paper(),
        },
    };
    if let Some(mode) = a.mode {
        config = config.with_mode(mode);
    }
    if let Some(steps) = a.steps {
        config.train_steps = steps;
    }
    if a.no_reg {
        config.latent_reg = false;
    }
    config.validate()?;

    let mut train_set = split(&load_corpus(&a.corpus)?, a.split_seed.unwrap_or(a.seed))?.train;
    if let Some(fraction) = a.labelled_fraction {
        let kept = keep_labelled_fraction(&mut train_set, fraction, a.seed)?;
        log::info!("{kept} labelled training records");
    }
    let every = (config.train_steps / 20).max(1);
    let trained = train_with(&config, &train_set, a.seed, |l| {
        if l.step % every == 0 || l.step + 1 == config.train_steps {
            log::info!("step {} loss {:.3} (recon {:.3})", l.step, l.total, l.reconstruction);
        }
    })?;
    checkpoint::save(&trained.model, &a.out)?;
    let loss_path = a.loss_csv.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut csv = Vec::new();
    trained.log.write_csv(&mut csv)?;
    write_atomic(&loss_path, &csv)?;
    log::info!(
        "wrote {} ({}) and {}",
        a.out.display(),
        checkpoint::checkpoint_id(&trained.model)?,
        loss_path.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let test = test_split(&a.corpus, a.split_seed.unwrap_or(a.seed))?;
    let mut reports = Vec::new();
    for path in &a.checkpoint {
        let (model, _) = checkpoint::load(path)?;
        for run in 0..a.runs {
            let opts = EvalOptions {
                steps: a.steps,
                samples: a.samples,
                seed: a.seed + run,
            };
            reports.push(evaluate(&model, &test, opts)?);
        }
    }
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        EvalReport::write_csv(&reports, &mut buf)?;
        write_atomic(path, &buf)?;
    }
    let json = if reports.len() == 1 {
        pretty_json(&reports[0])?
    } else {
        pretty_json(&reports)?
    };
    emit(a.out.as_deref(), &json)
}

fn sweep(a: SweepArgs) -> CliResult {
    let test = test_split(&a.corpus, a.split_seed.unwrap_or(a.seed))?;
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let result = fader_sweep(&model, &test, a.feature, a.steps, a.samples, a.seed)?;
    emit(a.out.as_deref(), &pretty_json(&result)?)
}

fn transfer_cmd(a: TransferArgs) -> CliResult {
    let (model, manifest) = checkpoint::load(&a.checkpoint)?;
    let records = load_corpus(&a.input)?;
    let mut buf = Vec::new();
    for r in &records {
        let result = transfer(&model, &r.segment, a.target, a.strength)?;
        let line = service::TransferResponse {
            checkpoint_id: manifest.id.clone(),
            result,
        };
        serde_json::to_writer(&mut buf, &line).map_err(fadernets::Error::from)?;
        buf.push(b'\n');
    }
    emit(a.out.as_deref(), &buf)
}

fn project(a: ProjectArgs) -> CliResult {
    let test = test_split(&a.corpus, a.split_seed.unwrap_or(a.seed))?;
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let latents = encode_records(&model, &test)?;
    let slots: Vec<usize> = match a.feature {
        Some(f) => vec![model.slot_of(f)],
        None => (0..model.latent_count()).collect(),
    };
    let points: Vec<Vec<f64>> = (0..test.len())
        .map(|i| {
            slots
                .iter()
                .flat_map(|&s| latents[s].row(i).iter().map(|&v| v as f64))
                .collect()
        })
        .collect();
    let labels: Vec<String> = test
        .iter()
        .map(|r| match r.reference_class.or(r.arousal_class) {
            Some(c) => c.to_string(),
            None => "unlabelled".into(),
        })
        .collect();
    let projected = project_latents(&points, &labels, a.seed)?;
    let mut buf = Vec::new();
    ProjectedPoint::write_csv(&projected, &mut buf)?;
    write_atomic(&a.out, &buf)?;
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let loaded = a.checkpoint.as_deref().map(Loaded::from_file).transpose()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(AppState::new(loaded), SocketAddr::new(a.host, a.port)))?;
    Ok(())
}

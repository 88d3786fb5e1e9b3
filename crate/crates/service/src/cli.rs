use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use intentgate_core::corpus::{
    ingest_dataset, load_dataset, Dataset, DatasetKind, IntentRegistry, Strictness,
};
use intentgate_core::datagen::{dataset_file, generate, summarize, CorpusSpec, REGISTRY_FILE};
use intentgate_core::eval::{
    config_hash, evaluate, even_thresholds, render_report, render_sweep, sweep, EvalReport,
    ReportFormat, ReportMetadata, ReportRow,
};
use intentgate_core::normalize::NormalizeConfig;
use intentgate_core::pipeline::{oracle_client, Mode, Pipeline, PipelineConfig};
use intentgate_core::rerank::{RerankerClient, TemplateSet};
use intentgate_core::shortlist::{fit, ShortlistConfig, ShortlistModel};

use crate::config::{build_client, load_model, load_registry_file, RerankerConfig, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "intentgate",
    version,
    about = "Intent classification with out-of-scope gating"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (registry plus four splits).
    GenData(GenDataArgs),
    /// Fit a shortlist model and write it to a file.
    Train(TrainArgs),
    /// Evaluate in-scope accuracy and out-of-scope FPR.
    Eval(EvalArgs),
    /// Evaluate the vector gate across evenly spaced thresholds.
    Sweep(SweepArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Corpus spec TOML; built-in defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_intents: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding registry.jsonl and the split files.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Registry file; defaults to <data>/registry.jsonl.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

impl DataArgs {
    fn registry_path(&self) -> PathBuf {
        self.registry
            .clone()
            .unwrap_or_else(|| self.data.join(REGISTRY_FILE))
    }

    fn split_path(&self, explicit: &Option<PathBuf>, kind: DatasetKind) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.data.join(dataset_file(kind)))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training split file; defaults to <data>/<kind>.jsonl.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TrainKind::Generated)]
    pub kind: TrainKind,
    /// Fail on count-range violations instead of reporting them.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 3)]
    pub ngram_min: usize,
    #[arg(long, default_value_t = 5)]
    pub ngram_max: usize,
    #[arg(long)]
    pub no_lowercase: bool,
    #[arg(long)]
    pub no_strip_diacritics: bool,
    #[arg(long)]
    pub no_strip_punctuation: bool,
    /// Model output file.
    #[arg(long, default_value = "model.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    Simple,
    Generated,
}

impl From<TrainKind> for DatasetKind {
    fn from(kind: TrainKind) -> Self {
        match kind {
            TrainKind::Simple => DatasetKind::Simple,
            TrainKind::Generated => DatasetKind::Generated,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalSetArgs {
    #[arg(long, default_value = "model.jsonl")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Labeled in-scope test file; defaults to <data>/test.jsonl.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Out-of-scope file; defaults to <data>/oos.jsonl.
    #[arg(long)]
    pub oos: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankerChoice {
    /// Answers the gold option whenever it is on the prompt.
    Oracle,
    /// Reranker from the `[reranker]` section of --config.
    Config,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub set: EvalSetArgs,
    #[arg(long, value_parser = parse_mode, default_value = "vector")]
    pub mode: Mode,
    #[arg(long, default_value_t = intentgate_core::pipeline::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Reranker used in rerank mode.
    #[arg(long, value_enum, default_value_t = RerankerChoice::Oracle)]
    pub reranker: RerankerChoice,
    /// Service config supplying the reranker when --reranker config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Row label; derived from the mode when omitted.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_parser = parse_format, default_value = "table")]
    pub format: ReportFormat,
    /// Append a generation timestamp (makes output non-reproducible).
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub set: EvalSetArgs,
    /// Number of evenly spaced thresholds from 0 to 1.
    #[arg(long, default_value_t = 11)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config TOML; `INTENTGATE_*` variables and these flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub allow_threshold_override: Option<bool>,
    #[arg(long)]
    pub expose_trace: Option<bool>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing::Level::WARN)
        .init();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain on one line, skipping causes already quoted by
/// their parent.
pub fn one_line(error: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if message.contains(&text) {
            continue;
        }
        if !message.is_empty() {
            message.push_str(": ");
        }
        message.push_str(&text);
    }
    message.replace('\n', " ")
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(&args, out),
        Command::Train(args) => train(&args, out),
        Command::Eval(args) => eval(&args, out),
        Command::Sweep(args) => sweep_cmd(&args, out),
        Command::Serve(args) => serve(&args),
    }
}

fn gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => CorpusSpec::load(path)?,
        None => CorpusSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.n_intents {
        spec.n_intents = n;
    }
    let corpus = generate(&spec)?;
    corpus.write_to_dir(&args.out)?;
    writeln!(out, "seed: {}", spec.seed)?;
    write!(out, "{}", summarize(&corpus).render())?;
    writeln!(out, "\ntrain/test overlap: {:.4}", corpus.overlap)?;
    Ok(())
}

fn load_split(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    load_dataset(path, kind).with_context(|| format!("loading {} set {}", kind, path.display()))
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let registry = load_registry_file(&args.data.registry_path())?;
    let kind = DatasetKind::from(args.kind);
    let path = args.data.split_path(&args.train, kind);
    let strictness = if args.strict {
        Strictness::Strict
    } else {
        Strictness::Report
    };
    let (dataset, violations) = ingest_dataset(&path, kind, &registry, strictness)
        .with_context(|| format!("loading {kind} set {}", path.display()))?;
    for v in &violations {
        tracing::warn!(rule = v.rule(), "{}: {v}", path.display());
    }
    let config = ShortlistConfig {
        ngram_min: args.ngram_min,
        ngram_max: args.ngram_max,
        normalize: NormalizeConfig {
            lowercase: !args.no_lowercase,
            strip_diacritics: !args.no_strip_diacritics,
            strip_punctuation: !args.no_strip_punctuation,
        },
    };
    let model = fit(&dataset, &registry, config)?;
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    model
        .save(&mut writer)
        .with_context(|| format!("writing {}", args.out.display()))?;
    writer
        .flush()
        .with_context(|| format!("writing {}", args.out.display()))?;
    writeln!(
        out,
        "trained {} intents on {} examples, {} features -> {}",
        model.intent_ids().len(),
        dataset.len(),
        model.vocabulary_len(),
        args.out.display()
    )?;
    Ok(())
}

struct EvalInputs {
    model: Arc<ShortlistModel>,
    registry: Arc<IntentRegistry>,
    test: Dataset,
    oos: Dataset,
}

fn load_eval_inputs(set: &EvalSetArgs) -> Result<EvalInputs> {
    let registry = load_registry_file(&set.data.registry_path())?;
    let model = load_model(&set.model)?;
    let test = load_split(
        &set.data.split_path(&set.test, DatasetKind::Test),
        DatasetKind::Test,
    )?;
    let oos = load_split(
        &set.data.split_path(&set.oos, DatasetKind::Oos),
        DatasetKind::Oos,
    )?;
    Ok(EvalInputs {
        model: Arc::new(model),
        registry: Arc::new(registry),
        test,
        oos,
    })
}

/// Everything that determines eval output besides the data itself.
#[derive(Serialize)]
struct EvalFingerprint<'a> {
    pipeline: &'a PipelineConfig,
    reranker: Option<&'static str>,
    intents: usize,
    features: usize,
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let inputs = load_eval_inputs(&args.set)?;
    let config = PipelineConfig {
        mode: args.mode,
        threshold: args.threshold,
        normalize: inputs.model.config().normalize,
        ..PipelineConfig::default()
    };
    let client: Option<Arc<dyn RerankerClient>> = match args.mode {
        Mode::Vector => None,
        Mode::Rerank => Some(match args.reranker {
            RerankerChoice::Oracle => Arc::new(oracle_client(
                &config,
                &inputs.model,
                &inputs.registry,
                &TemplateSet::bundled(),
                &inputs.test,
            )?),
            RerankerChoice::Config => {
                let Some(path) = &args.config else {
                    bail!("--reranker config requires --config <service config>");
                };
                let service = ServiceConfig::load(path)?;
                let reranker: RerankerConfig = service
                    .reranker
                    .with_context(|| format!("{} has no [reranker] section", path.display()))?;
                build_client(&reranker, &inputs.registry, service.max_in_flight)?
            }
        }),
    };
    let pipeline = Pipeline::new(
        config.clone(),
        inputs.model.clone(),
        inputs.registry.clone(),
        client,
    )?;
    let metrics = evaluate(&pipeline, &inputs.test, &inputs.oos)?;
    let name = args.name.clone().unwrap_or_else(|| match args.mode {
        Mode::Vector => format!("tf-idf shortlist, threshold {:.2}", args.threshold),
        Mode::Rerank => format!(
            "tf-idf top-{} + {} reranker",
            intentgate_core::rerank::PROMPT_INTENT_OPTIONS,
            match args.reranker {
                RerankerChoice::Oracle => "oracle",
                RerankerChoice::Config => "configured",
            }
        ),
    });
    let fingerprint = EvalFingerprint {
        pipeline: &config,
        reranker: (args.mode == Mode::Rerank).then_some(match args.reranker {
            RerankerChoice::Oracle => "oracle",
            RerankerChoice::Config => "config",
        }),
        intents: inputs.registry.len(),
        features: inputs.model.vocabulary_len(),
    };
    let report = EvalReport {
        rows: vec![ReportRow::from_metrics(name, metrics)?],
        metadata: ReportMetadata {
            dataset_sizes: BTreeMap::from([
                ("test".to_owned(), inputs.test.len()),
                ("oos".to_owned(), inputs.oos.len()),
            ]),
            config_hash: Some(config_hash(&fingerprint)),
            timestamp: args.timestamp.then(timestamp),
        },
    };
    write!(out, "{}", render_report(&report, args.format))?;
    Ok(())
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix {secs}")
}

fn sweep_cmd(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let inputs = load_eval_inputs(&args.set)?;
    let config = PipelineConfig {
        normalize: inputs.model.config().normalize,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, inputs.model, inputs.registry, None)?;
    let rows = sweep(
        &pipeline,
        &inputs.test,
        &inputs.oos,
        &even_thresholds(args.steps),
    )?;
    write!(out, "{}", render_sweep(&rows))?;
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(v) = &args.listen {
        config.listen = v.clone();
    }
    if let Some(v) = &args.model {
        config.model = v.clone();
    }
    if let Some(v) = &args.registry {
        config.registry = v.clone();
    }
    if let Some(v) = args.mode {
        config.pipeline.mode = v;
    }
    if let Some(v) = args.threshold {
        config.pipeline.threshold = v;
    }
    if let Some(v) = args.allow_threshold_override {
        config.allow_threshold_override = v;
    }
    if let Some(v) = args.expose_trace {
        config.expose_trace = v;
    }
    config.validate()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(crate::server::serve(config))
}

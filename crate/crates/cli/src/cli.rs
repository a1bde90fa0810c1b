use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use metaphor_core::classifier::Backend;
use metaphor_core::corpus::DatasetName;
use metaphor_core::locator::Aggregation;
use metaphor_core::par::ExecutionMode;
use metaphor_core::pos::PosTag;
use metaphor_core::reconstructor::ReconstructorBackend;
use metaphor_core::transfer::Sampling;

use crate::commands;
use crate::config::{RunConfig, SimilarityKind};
use crate::error::{exit_code, usage, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "metaphor", version, about = "Literal-to-metaphor transfer pipeline")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Abort on the first malformed input row.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a labeled dataset and/or a literal corpus.
    Ingest(IngestArgs),
    /// Train a metaphor classifier.
    TrainClf(TrainClfArgs),
    /// Score a classifier on a dataset split.
    EvalClf(EvalArgs),
    /// Train a masked metaphor reconstructor on classifier true positives.
    TrainMmm(TrainMmmArgs),
    /// Score a reconstructor on a dataset split.
    EvalMmm(EvalArgs),
    /// Turn literal sentences into metaphorical ones.
    Transfer(TransferArgs),
    /// Acceptance ratios per source and masked part of speech.
    Ratios(RatiosArgs),
    /// Locate metaphors from encoder attention.
    Locate(LocateArgs),
    /// Location accuracy for every layer and head.
    SweepAttention(SweepArgs),
    /// Add system metaphors to a training set and compare with duplication.
    Augment(AugmentArgs),
    /// Build a blind annotation packet of system and human metaphors.
    EvalPack(EvalPackArgs),
    /// Aggregate annotation scores for a packet.
    EvalSummarize(EvalSummarizeArgs),
    /// Serve annotation packets over HTTP and collect scores.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// `moh-x`, `trofi`, `trofi-x` or `custom` (JSON lines).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub plaintext: Option<PathBuf>,
    /// Source name given to corpus sentences.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long = "wikipedia-topic")]
    pub wikipedia_topics: Vec<String>,
    #[arg(long)]
    pub per_topic: Option<usize>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainClfArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub backend: Option<String>,
    /// Encoder model directory or `scratch`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Classifier (eval-clf) or reconstructor (eval-mmm) directory or `mock:` spec.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct TrainMmmArgs {
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// `mlm` or `seq2seq`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Classifier directory or `mock:` spec.
    #[arg(long)]
    pub classifier: Option<String>,
    /// Reconstructor directory or `mock:` spec.
    #[arg(long)]
    pub reconstructor: Option<String>,
    /// Literal sentences (JSON lines, or `.txt` with one per line).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Number of accepted transfers to produce.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Parts of speech eligible for masking (repeatable).
    #[arg(long = "pos")]
    pub pos: Vec<String>,
    /// Sample among the top k candidates instead of taking the best.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long, value_enum)]
    pub similarity: Option<SimilarityKind>,
}

#[derive(Debug, Args)]
pub struct RatiosArgs {
    #[arg(long)]
    pub attempts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocateArgs {
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// 1-based.
    #[arg(long)]
    pub layer: Option<usize>,
    /// 1-based.
    #[arg(long)]
    pub head: Option<usize>,
    /// `sum` or `max`.
    #[arg(long)]
    pub aggregation: Option<String>,
    #[arg(long)]
    pub heatmaps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub aggregation: Option<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Accepted transfers (JSON lines).
    #[arg(long)]
    pub transfers: Option<PathBuf>,
    /// Literal pool (JSON lines or `.txt`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Sentences added per class.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eval_split: Option<String>,
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalPackArgs {
    #[arg(long)]
    pub transfers: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub human_split: Option<String>,
    /// Items drawn from each of the system and human pools.
    #[arg(long)]
    pub per_origin: Option<usize>,
    #[arg(long)]
    pub packet_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalSummarizeArgs {
    #[arg(long)]
    pub packet_dir: Option<PathBuf>,
    #[arg(long)]
    pub packet_id: Option<String>,
    /// Scores as JSON lines (what `serve` writes) or CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub packet_dir: Option<PathBuf>,
    /// Serve only this packet.
    #[arg(long)]
    pub packet_id: Option<String>,
    #[arg(long)]
    pub addr: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn parse<T: std::str::FromStr<Err = metaphor_core::Error>>(v: Option<&String>) -> anyhow::Result<Option<T>> {
    v.map(|s| s.parse::<T>()).transpose().map_err(Into::into)
}

fn aggregation(v: Option<&String>) -> anyhow::Result<Option<Aggregation>> {
    v.map(|s| match s.to_ascii_lowercase().as_str() {
        "sum" => Ok(Aggregation::Sum),
        "max" => Ok(Aggregation::Max),
        other => Err(usage(format!("unknown aggregation `{other}`; use sum or max"))),
    })
    .transpose()
}

fn pos_tags(v: &[String]) -> anyhow::Result<Option<BTreeSet<PosTag>>> {
    if v.is_empty() {
        return Ok(None);
    }
    v.iter()
        .map(|s| {
            serde_json::from_value::<PosTag>(serde_json::Value::String(s.to_ascii_uppercase()))
                .ok()
                .filter(|t| *t != PosTag::Other)
                .ok_or_else(|| usage(format!("unknown or non-content part of speech `{s}`")))
        })
        .collect::<anyhow::Result<_>>()
        .map(Some)
}

/// Builds the effective config: file (or defaults), then flags.
pub fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.seed, cli.seed);
    set_opt(&mut c.paths.out, cli.out.clone());
    c.strict |= cli.strict;
    if cli.sequential {
        c.execution = ExecutionMode::Sequential;
    }
    match &cli.command {
        Command::Ingest(a) => {
            set_opt(&mut c.ingest.dataset, parse::<DatasetName>(a.dataset.as_ref())?);
            set_opt(&mut c.ingest.input, a.input.clone());
            set_opt(&mut c.ingest.plaintext, a.plaintext.clone());
            set(&mut c.ingest.source, a.source.clone());
            if !a.wikipedia_topics.is_empty() {
                c.ingest.wikipedia_topics = a.wikipedia_topics.clone();
            }
            set(&mut c.ingest.wikipedia_per_topic, a.per_topic);
            set(&mut c.ingest.wikipedia_endpoint, a.endpoint.clone());
            set_opt(&mut c.ingest.cache_dir, a.cache_dir.clone());
        }
        Command::TrainClf(a) => {
            set_opt(&mut c.paths.dataset, a.dataset.clone());
            if let Some(b) = parse::<Backend>(a.backend.as_ref())? {
                if b != c.classifier.backend {
                    c.classifier.backend = b;
                    c.classifier.feature_spec = None;
                    c.classifier.encoder_spec = None;
                }
            }
            set(&mut c.classifier.threshold_h, a.threshold);
            if a.model.is_some() || a.epochs.is_some() {
                if c.classifier.backend.is_feature_based() {
                    return Err(usage("--model and --epochs apply to the encoder backend only"));
                }
                let spec = c.classifier.encoder_spec.get_or_insert_with(Default::default);
                set(&mut spec.model, a.model.clone());
                set(&mut spec.epochs, a.epochs);
            }
        }
        Command::EvalClf(a) => {
            set_opt(&mut c.paths.classifier, a.model.clone());
            set_opt(&mut c.paths.dataset, a.dataset.clone());
        }
        Command::EvalMmm(a) => {
            set_opt(&mut c.paths.reconstructor, a.model.clone());
            set_opt(&mut c.paths.dataset, a.dataset.clone());
        }
        Command::TrainMmm(a) => {
            set_opt(&mut c.paths.classifier, a.classifier.clone());
            set_opt(&mut c.paths.dataset, a.dataset.clone());
            set(&mut c.reconstructor.backend, parse::<ReconstructorBackend>(a.backend.as_ref())?);
            set(&mut c.reconstructor.model, a.model.clone());
            set(&mut c.reconstructor.epochs, a.epochs);
        }
        Command::Transfer(a) => {
            set_opt(&mut c.paths.classifier, a.classifier.clone());
            set_opt(&mut c.paths.reconstructor, a.reconstructor.clone());
            set_opt(&mut c.paths.corpus, a.corpus.clone());
            let t = &mut c.transfer.config;
            set(&mut t.budget_n, a.budget);
            set(&mut t.max_attempts, a.max_attempts);
            if a.budget.is_some() && a.max_attempts.is_none() {
                t.max_attempts = t.max_attempts.max(t.budget_n);
            }
            set(&mut t.threshold_h, a.threshold);
            set(&mut t.pos_filter, pos_tags(&a.pos)?);
            set(&mut t.sampling, a.top_k.map(|k| Sampling::TopK { k }));
            set(&mut t.retries, a.retries);
            set(&mut c.transfer.similarity, a.similarity);
        }
        Command::Ratios(a) => set_opt(&mut c.paths.attempts, a.attempts.clone()),
        Command::Locate(a) => {
            set_opt(&mut c.paths.classifier, a.classifier.clone());
            set_opt(&mut c.paths.dataset, a.dataset.clone());
            set(&mut c.locator.split, a.split.clone());
            set(&mut c.locator.config.layer, a.layer);
            set(&mut c.locator.config.head, a.head);
            set(&mut c.locator.config.aggregation, aggregation(a.aggregation.as_ref())?);
            set(&mut c.locator.heatmaps, a.heatmaps);
        }
        Command::SweepAttention(a) => {
            set_opt(&mut c.paths.classifier, a.classifier.clone());
            set_opt(&mut c.paths.dataset, a.dataset.clone());
            set(&mut c.locator.split, a.split.clone());
            set(&mut c.locator.config.aggregation, aggregation(a.aggregation.as_ref())?);
        }
        Command::Augment(a) => {
            set_opt(&mut c.paths.dataset, a.dataset.clone());
            set_opt(&mut c.paths.transfers, a.transfers.clone());
            set_opt(&mut c.paths.corpus, a.corpus.clone());
            set(&mut c.augment.k_per_class, a.k);
            set(&mut c.augment.eval_split, a.eval_split.clone());
            if let Some(b) = parse::<Backend>(a.backend.as_ref())? {
                c.classifier.backend = b;
                c.classifier.feature_spec = None;
                c.classifier.encoder_spec = None;
            }
        }
        Command::EvalPack(a) => {
            set_opt(&mut c.paths.transfers, a.transfers.clone());
            set_opt(&mut c.paths.dataset, a.dataset.clone());
            set(&mut c.eval.human_split, a.human_split.clone());
            set(&mut c.eval.per_origin, a.per_origin);
            set(&mut c.eval.packet_id, a.packet_id.clone());
        }
        Command::EvalSummarize(a) => {
            set_opt(&mut c.paths.packet_dir, a.packet_dir.clone());
            set(&mut c.eval.packet_id, a.packet_id.clone());
            set_opt(&mut c.paths.scores, a.scores.clone());
        }
        Command::Serve(a) => {
            set_opt(&mut c.paths.packet_dir, a.packet_dir.clone());
            set(&mut c.serve.addr, a.addr.clone());
        }
    }
    c.normalize();
    c.validate()?;
    Ok(c)
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let config = effective_config(cli)?;
    match &cli.command {
        Command::Ingest(_) => commands::ingest(config),
        Command::TrainClf(a) => commands::train_clf(config, &a.split),
        Command::EvalClf(a) => commands::eval_clf(config, &a.split),
        Command::TrainMmm(a) => commands::train_mmm(config, &a.split),
        Command::EvalMmm(a) => commands::eval_mmm(config, &a.split),
        Command::Transfer(_) => commands::transfer(config),
        Command::Ratios(_) => commands::ratios(config),
        Command::Locate(_) => commands::locate(config),
        Command::SweepAttention(_) => {
            let agg = config.locator.config.aggregation;
            commands::sweep(config, agg)
        }
        Command::Augment(_) => commands::augment(config),
        Command::EvalPack(_) => commands::eval_pack(config),
        Command::EvalSummarize(_) => commands::eval_summarize(config),
        Command::Serve(a) => {
            let dir = config
                .paths
                .packet_dir
                .clone()
                .ok_or_else(|| usage("serve needs a packet directory (--packet-dir or paths.packet_dir)"))?;
            crate::serve::run(&dir, a.packet_id.as_deref(), &config.serve.addr, &config.serve.allowed_origins)
        }
    }
}

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

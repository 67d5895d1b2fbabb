//! `valuelens`: run pipeline stages individually, end to end, or serve the
//! review API.
//!
//! Every stage subcommand works in one of two modes. With `--config` and no
//! input flags it runs that stage of the configured pipeline (with manifest
//! caching). With explicit input flags it runs standalone on the given files.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
//! failure.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use valuelens::distill::Task;
use valuelens::pipeline::{ConfigError, PipelineError, Stage};
use valuelens::Label;

#[derive(Parser, Debug)]
#[command(
    name = "valuelens",
    version,
    about = "Discover public value expressions in sentence corpora"
)]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Rerun pipeline stages even when their manifests match.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment input documents into a sentence store.
    Ingest(IngestArgs),
    /// Match the sentence store against a tiered keyword lexicon.
    Filter(FilterArgs),
    /// Tier-weighted random sample of matched sentences.
    Sample(SampleArgs),
    /// Label sampled sentences with the GLM.
    Annotate(AnnotateArgs),
    /// Diversity and faithfulness of generated rationales.
    EvalRationales(EvalRationalesArgs),
    /// LDA topics over generated rationales.
    Topics(TopicsArgs),
    /// Train the linear classifier on GLM labels.
    Train(TrainArgs),
    /// Score a trained model and random baselines on the eval split.
    Eval(EvalArgs),
    /// Label every sentence of a store with a trained model.
    Predict(PredictArgs),
    /// Score predictions from an external classifier on the eval split.
    EvalExternal(EvalExternalArgs),
    /// Serve the human review API.
    ServeReview(ServeReviewArgs),
    /// Estimate GLM token usage and cost for a sample without calling it.
    CostEstimate(CostArgs),
    /// Check a run configuration without touching the network.
    ValidateConfig,
    /// Run pipeline stages in canonical order (all by default).
    Run(RunArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Documents JSONL: {"doc_id", "background"?, "summary"?, "abstract"?}.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sentence store to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Sentence store.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Match JSONL produced by `filter`.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Inclusion rates for tiers 1 to 4.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampled sent_ids, one per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub framework: Option<PathBuf>,
    /// Sampled sent_ids, one per line.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Sentence store holding the sampled sentences.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Offline mock fixture instead of the live endpoint.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Print the cost estimate and exit without calling the GLM.
    #[arg(long)]
    pub dry_run_cost: bool,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_concurrent: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalRationalesArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub framework: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub bleu_order: usize,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Restrict to one label; `all` for every label.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub top_words: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Sentence store with the annotated sentences' texts.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    /// Training seed (shuffling and initialisation).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset file (with the train/eval split) to write.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset written by `train`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub baseline_seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalExternalArgs {
    /// JSONL of {"sent_id", "label"}.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset written by `train`; the configured workdir's when omitted.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeReviewArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Sentence store with the annotated sentences' texts.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Append-only judgment journal, replayed on start.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Bearer token clients must present.
    #[arg(long, env = "VALUELENS_REVIEW_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long)]
    pub sample: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub framework: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Comma-separated subset of stages.
    #[arg(long, value_delimiter = ',')]
    pub stages: Option<Vec<Stage>>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn invalid(msg: impl std::fmt::Display) -> Self {
        Failure::Invalid(anyhow::anyhow!("{msg}"))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => config_failure(c),
            e @ PipelineError::MissingUpstream { .. } => Failure::Invalid(e.into()),
            e @ PipelineError::Stage { .. } => Failure::Runtime(e.into()),
        }
    }
}

pub fn config_failure(e: ConfigError) -> Failure {
    match e {
        ConfigError::Invalid(errors) => Failure::Invalid(anyhow::anyhow!(
            "invalid configuration:\n  - {}",
            errors.join("\n  - ")
        )),
        other => Failure::Invalid(other.into()),
    }
}

pub fn parse_label_filter(raw: &str) -> Result<Option<Label>, Failure> {
    if raw.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    raw.parse::<Label>().map(Some).map_err(Failure::invalid)
}

/// The error chain, skipping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(2)
        }
    }
}

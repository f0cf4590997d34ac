use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod pipeline;

#[derive(Parser)]
#[command(name = "flare", version, about = "Adaptive retrieval routing with a cost/accuracy knob")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate corpus / QA files and write their normalized JSONL form.
    Ingest(IngestArgs),
    /// Build or query a BM25 index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Produce classifier training labels.
    Label(LabelArgs),
    /// Train a routing classifier from a label file.
    Train(TrainArgs),
    /// Route one query with interpolated classifiers.
    Route(RouteArgs),
    /// Evaluate policies.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run ingest, index, label, train, and sweep end to end.
    Pipeline(pipeline::PipelineArgs),
    /// Write a synthetic benchmark (corpus, QA set, oracle).
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Directory for normalized copies.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = flare_core::retriever::DEFAULT_TOP_K)]
        k: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
enum AnswererKind {
    Mock,
    Http,
}

/// How queries get answered and passages retrieved.
#[derive(Args, Clone)]
struct AnswerSource {
    #[arg(long, value_enum, default_value_t = AnswererKind::Mock)]
    answerer: AnswererKind,
    /// Oracle behavior JSONL (mock answerer).
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Endpoint URL (HTTP answerer); defaults to $FLARE_LLM_URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = flare_core::http::DEFAULT_MAX_IN_FLIGHT)]
    max_in_flight: usize,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Prebuilt index; built from the corpus when omitted.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = flare_core::retriever::DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = flare_core::answer::DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LabelKind {
    Cost,
    Reliability,
    Combined,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(value_enum)]
    kind: LabelKind,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Exclusion sidecar for cost labeling (defaults to `<out>.exclusions.jsonl`).
    #[arg(long)]
    exclusions: Option<PathBuf>,
    /// Label queries no strategy answers as unanswerable instead of excluding them.
    #[arg(long)]
    unanswerable: bool,
    /// Existing cost labels to combine instead of recomputing them.
    #[arg(long)]
    cost_labels: Option<PathBuf>,
    #[command(flatten)]
    source: AnswerSource,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long, value_enum)]
    mode: LabelKind,
    #[arg(long)]
    out: PathBuf,
    /// Also export the JSON interchange form.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Four-class label space.
    #[arg(long)]
    unanswerable: bool,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args, Clone)]
struct Hyper {
    /// Feature dimension (power of two).
    #[arg(long, default_value_t = flare_core::classifier::DEFAULT_DIMENSION)]
    dim: usize,
    #[arg(long, default_value_t = flare_core::classifier::DEFAULT_HASH_SEED)]
    hash_seed: u64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    coc: PathBuf,
    #[arg(long)]
    roc: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long)]
    query: String,
    /// Run the chosen strategy and print the answer.
    #[arg(long)]
    execute: bool,
    /// Query id the mock oracle knows this question by.
    #[arg(long)]
    query_id: Option<String>,
    /// QA set used to validate the oracle and resolve the query id.
    #[arg(long)]
    qa: Option<PathBuf>,
    #[command(flatten)]
    source: AnswerSource,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Evaluate one policy.
    Run(EvalRunArgs),
    /// Sweep alpha over a grid.
    Sweep(EvalSweepArgs),
}

#[derive(Args)]
struct EvalCommon {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-query log (defaults to `<out>.log.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Skip queries whose answerer call fails instead of aborting.
    #[arg(long)]
    skip_failures: bool,
    #[command(flatten)]
    source: AnswerSource,
}

#[derive(Args)]
struct EvalRunArgs {
    /// static:no | static:single | static:multi | adaptive_rag | flare
    #[arg(long)]
    policy: String,
    /// Weights for adaptive_rag.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    coc: Option<PathBuf>,
    #[arg(long)]
    roc: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[command(flatten)]
    common: EvalCommon,
}

#[derive(Args)]
struct EvalSweepArgs {
    #[arg(long)]
    coc: PathBuf,
    #[arg(long)]
    roc: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,0.2,0.4,0.6,0.8,1")]
    alphas: Vec<f64>,
    #[command(flatten)]
    common: EvalCommon,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    unanswerable_share: f64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<flare_core::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Index(c) => commands::index(c),
        Command::Label(a) => commands::label(a),
        Command::Train(a) => commands::train(a),
        Command::Route(a) => commands::route(a),
        Command::Eval(c) => commands::eval(c),
        Command::Pipeline(a) => pipeline::run(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

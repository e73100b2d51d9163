//! `refeed` command-line driver.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Dense retrieval with re-ranker relevance feedback.
#[derive(Debug, Parser)]
#[command(name = "refeed", version, about)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "REFEED_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a binary index from JSONL embeddings (or re-encode a binary index).
    BuildIndex {
        /// JSONL file of {"id", "vector"} objects, or a binary index.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve, re-rank, distill and retrieve again for every query.
    Feedback(FeedbackArgs),
    /// Evaluate a TREC run file against qrels.
    Eval(EvalArgs),
    /// Generate a seeded synthetic benchmark.
    Synth(SynthArgs),
    /// Export passage and query vectors as CSV for external plotting.
    ExportVectors(ExportArgs),
}

#[derive(Debug, Args)]
pub struct FeedbackArgs {
    /// JSON file with any of the options below (underscored key names);
    /// flags override it. A run manifest is accepted too.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// JSONL query vectors.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// `file:SCORES.tsv` or `oracle:QRELS,MARGIN`.
    #[arg(long)]
    pub scorer: Option<String>,
    /// What to do when a score file lacks a pair: `error` or `retriever_score`.
    #[arg(long)]
    pub missing_policy: Option<String>,
    /// Candidates re-ranked and distilled per round [default: 100].
    #[arg(long)]
    pub k: Option<usize>,
    /// Gradient steps [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Re-ranker softmax temperature [default: 2].
    #[arg(long)]
    pub t_ce: Option<f64>,
    /// Retriever softmax temperature [default: 1].
    #[arg(long)]
    pub t_ret: Option<f64>,
    /// Feedback rounds [default: 1].
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Min-max normalize scores before each softmax [default: true].
    #[arg(long, action = clap::ArgAction::Set)]
    pub normalize: Option<bool>,
    /// Recompute retriever normalization every step [default: true].
    #[arg(long, action = clap::ArgAction::Set)]
    pub renormalize_each_step: Option<bool>,
    /// Length of the emitted runs [default: k].
    #[arg(long)]
    pub depth: Option<usize>,
    /// Tag written in the last column of every run line [default: refeed].
    #[arg(long)]
    pub tag: Option<String>,
    /// Abort on the first failing query.
    #[arg(long)]
    pub fail_fast: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated metrics.
    #[arg(long, default_value = "recall@100,ndcg@10,mrr@100,recall@20")]
    pub metrics: String,
    /// Second run for a paired t-test on the first metric.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Print per-query values as CSV.
    #[arg(long, conflicts_with = "json")]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON spec file; inline flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_passages: Option<usize>,
    #[arg(long)]
    pub n_queries: Option<usize>,
    #[arg(long)]
    pub positives_per_query: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub cluster_spread: Option<f64>,
    #[arg(long)]
    pub query_offset: Option<f64>,
    #[arg(long)]
    pub positive_spread: Option<f64>,
    /// Skip the baseline-recall difficulty check.
    #[arg(long)]
    pub no_band: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub updated_queries: Option<PathBuf>,
    /// Passages exported per query: the top-k of each exported query vector.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildIndex { embeddings, out } => commands::build_index(&embeddings, &out),
        Command::Feedback(args) => commands::feedback(args, cli.threads),
        Command::Eval(args) => commands::eval(args),
        Command::Synth(args) => commands::synth(args, cli.threads),
        Command::ExportVectors(args) => commands::export_vectors(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}

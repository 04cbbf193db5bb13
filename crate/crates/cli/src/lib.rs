//! Command-line pipeline: retrieval, synthetic data, training, re-ranking,
//! evaluation, fusion and analysis.
//!
//! Every flag can also be given in a `key = value` file passed with
//! `--config`; keys are the flag names with `-` replaced by `_`, and flags on
//! the command line win.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "setrank", version, about = "Listwise re-ranking pipeline")]
pub struct Cli {
    /// Worker threads for re-ranking; 1 keeps every run bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Key-value file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inverted index over a corpus.
    #[command(subcommand)]
    Index(IndexCommand),
    /// BM25 search producing a run file.
    Search(SearchArgs),
    /// Synthetic ranking tasks.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// One training phase.
    Train(TrainArgs),
    /// Re-rank a first-stage run with a trained model.
    Rerank(RerankArgs),
    /// Score a run against relevance judgments.
    Eval(EvalArgs),
    /// Linear score fusion.
    #[command(subcommand)]
    Fuse(FuseCommand),
    /// Attention and score-distribution analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Render an analysis CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build(IndexBuildArgs),
    Search(SearchArgs),
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Index file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Prebuilt index; otherwise `--corpus` is indexed on the fly.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Results per query (default 1000).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub out_run: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    Generate(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `pointwise` or `comparative`.
    #[arg(long)]
    pub task: Option<String>,
    /// Number of (training) queries.
    #[arg(long)]
    pub queries: Option<usize>,
    /// Held-out queries; when positive, output goes to `train/` and `test/`.
    #[arg(long)]
    pub test_queries: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub relevant: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub answer_pool: Option<usize>,
    #[arg(long)]
    pub scale_len: Option<usize>,
    #[arg(long)]
    pub passage_len: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `warmup` (no feature) or `feature`.
    #[arg(long)]
    pub phase: Option<String>,
    /// Directory with corpus.tsv, queries.tsv, qrels.txt and run.txt.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Same layout as `--data-dir`, used for periodic validation.
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    /// Model directory to continue from.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidates per set.
    #[arg(long)]
    pub n: Option<usize>,
    /// `f32` or `f64` for a fresh model.
    #[arg(long)]
    pub dtype: Option<String>,
    /// Model directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub run_in: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// `full`, `no_feature` or `no_global`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out_run: Option<PathBuf>,
    /// Write global-attention similarities to this CSV.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    /// Labels for the attention dump; unjudged candidates get grade 0.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Comma-separated, e.g. `mrr@10,map,ndcg@10`.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Minimum grade counted as relevant; by default 2 on graded qrels, 1 on binary.
    #[arg(long)]
    pub rel_threshold: Option<u32>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum FuseCommand {
    Fit(FuseFitArgs),
    Apply(FuseApplyArgs),
}

#[derive(Debug, Args)]
pub struct FuseFitArgs {
    /// Feature runs; the first one defines the candidates. Repeatable.
    #[arg(long)]
    pub run: Vec<PathBuf>,
    /// Comma-separated feature names, one per run.
    #[arg(long)]
    pub names: Option<String>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long)]
    pub rel_threshold: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseApplyArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature runs in the order the model was fitted on. Repeatable.
    #[arg(long)]
    pub run: Vec<PathBuf>,
    #[arg(long)]
    pub out_run: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Label-pair similarity summary from an attention dump.
    Attention(AnalyzeAttentionArgs),
    /// Scores grouped by relevance grade.
    Scores(AnalyzeScoresArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeAttentionArgs {
    #[arg(long)]
    pub attention: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeScoresArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Per-document rows.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Per-grade count, mean and quartiles.
    #[arg(long)]
    pub out_summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Score rows, attention dump or attention summary CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub title: Option<String>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let threads = settings.or(cli.threads, "threads", 1)?.max(1);
    commands::dispatch(&settings, threads, cli.command)
}

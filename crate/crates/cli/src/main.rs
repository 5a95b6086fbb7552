//! `kghop` — multi-hop reasoning over sparse knowledge graphs.
//!
//! Pipeline: `sample-dataset` carves benchmark-style splits out of a triple
//! file, `train-kge` fits the embedding score model, `train-agent` trains
//! the RL walker on top of it, `evaluate` runs beam-search link prediction
//! with filtered ranking, and `analyze` aggregates completion-usage tables
//! across runs. `inspect-graph` prints sparsity statistics.

mod artifacts;
mod checkpoint;
mod commands;
mod config;
mod io;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "kghop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a graph and report vocabulary sizes and degree statistics.
    InspectGraph(InspectArgs),
    /// Build sparse datasets: retention sampling, entity-neighborhood
    /// sampling and train/valid/test re-splitting.
    SampleDataset(SampleArgs),
    /// Train an embedding score model (TransE, DistMult or ConvE).
    TrainKge(TrainKgeArgs),
    /// Train the RL walker with dynamic anticipation and completion.
    TrainAgent(TrainAgentArgs),
    /// Beam-search link prediction with filtered MRR/Hits@K.
    Evaluate(EvaluateArgs),
    /// Completion-usage tables (ratio vs epoch, ratio vs alpha) over runs.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Adjacency cap per entity (0 disables).
    #[arg(long, default_value_t = 200)]
    max_out_degree: usize,
    /// Write entities.tsv / relations.tsv into this directory.
    #[arg(long)]
    dump_vocab: Option<PathBuf>,
    /// Write the sparsity report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Input triple files (merged).
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep a uniform fraction of the triples.
    #[arg(long)]
    retain_fraction: Option<f64>,
    /// Sample this many random seed entities and keep incident triples.
    #[arg(long)]
    entity_seeds: Option<usize>,
    /// Read seed entities (one per line) from a file.
    #[arg(long)]
    entity_file: Option<PathBuf>,
    /// Neighborhood expansion rounds for entity sampling.
    #[arg(long, default_value_t = 0)]
    expansion_rounds: usize,
    /// Comma-separated train,valid,test ratios.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split_ratios: String,
}

#[derive(Args)]
struct TrainKgeArgs {
    #[arg(long)]
    out: PathBuf,
    /// Base configuration file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    max_out_degree: Option<usize>,
    /// transe | distmult | conve
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// TransE distance norm (1 or 2).
    #[arg(long)]
    norm: Option<u8>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 | f64
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    conve_rows: Option<usize>,
    #[arg(long)]
    conve_cols: Option<usize>,
    #[arg(long)]
    conve_channels: Option<usize>,
    #[arg(long)]
    conve_kernel: Option<usize>,
    #[arg(long)]
    conve_input_dropout: Option<f64>,
    #[arg(long)]
    conve_feature_dropout: Option<f64>,
    #[arg(long)]
    conve_hidden_dropout: Option<f64>,
}

#[derive(Args)]
struct TrainAgentArgs {
    #[arg(long)]
    out: PathBuf,
    /// Base configuration file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    max_out_degree: Option<usize>,
    /// Directory of the pretrained score-model checkpoint.
    #[arg(long)]
    kge: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    /// off | sample | topone | average
    #[arg(long)]
    anticipation: Option<String>,
    #[arg(long)]
    completion_alpha: Option<f64>,
    #[arg(long)]
    completion_max: Option<usize>,
    #[arg(long)]
    completion_tails: Option<usize>,
    #[arg(long)]
    action_dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Episode horizon T.
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    entropy_weight: Option<f64>,
    /// none | ema
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    baseline_decay: Option<f64>,
    /// never | first-step | every-step
    #[arg(long)]
    gold_mask: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_beam_width: Option<usize>,
    /// f32 | f64
    #[arg(long)]
    precision: Option<String>,
    /// Grid-search values for the completion proportion.
    #[arg(long, value_delimiter = ',')]
    grid_alpha: Vec<f64>,
    /// Grid-search values for the added-action cap.
    #[arg(long, value_delimiter = ',')]
    grid_max_added: Vec<usize>,
    /// Grid-search values for tails per probed relation.
    #[arg(long, value_delimiter = ',')]
    grid_tails: Vec<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory produced by train-agent.
    #[arg(long)]
    run: PathBuf,
    /// train | valid | test
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 64)]
    beam_width: usize,
    /// Dump the top-3 reasoning paths for this many queries.
    #[arg(long, default_value_t = 0)]
    dump_paths: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directories to aggregate.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Trailing epochs averaged for the per-alpha table.
    #[arg(long, default_value_t = 5)]
    window: usize,
}

fn main() {
    let cli = Cli::parse();
    let result: Result<()> = match cli.command {
        Command::InspectGraph(args) => commands::inspect::run(args),
        Command::SampleDataset(args) => commands::sample::run(args),
        Command::TrainKge(args) => commands::train_kge::run(args),
        Command::TrainAgent(args) => commands::train_agent::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Analyze(args) => commands::analyze::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

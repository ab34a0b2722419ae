use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ltrr_core::config::{Overrides, RunConfig, OUT_DIR_ENV};
use ltrr_core::corpus::SplitScheme;
use ltrr_core::labels::UtilityMetric;
use ltrr_core::pipeline::{Run, Stage, REPORT_TXT};
use ltrr_core::train::Algo;

#[derive(Parser)]
#[command(name = "ltrr", version, about = "Train and evaluate retriever routers from a run config")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Read and validate the document and query files.
    Ingest(Common),
    /// Build the lexical and dense indexes and the retriever pool.
    Index(Common),
    /// Compute train/test splits.
    Split(Common),
    /// Extract routing features for every (query, retriever) option.
    Features(Common),
    /// Run every retriever and label options by utility gain.
    Label(Common),
    /// Fit routing models.
    Train(Common),
    /// Route test queries with trained models.
    Route(Common),
    /// Evaluate routing policies against the baseline and the oracle.
    Eval(Common),
    /// Render the evaluation as a table and a text grid.
    Report(Common),
    /// Run every stage in order.
    Pipeline(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Run config file (TOML).
    #[arg(long, default_value = "run.toml")]
    config: PathBuf,
    /// Master seed; every module seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Train and evaluate only this algorithm.
    #[arg(long, value_parser = parse_algo)]
    algo: Option<String>,
    /// Utility metric for labels.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<String>,
    /// Use only this split scheme.
    #[arg(long, value_parser = parse_split)]
    split: Option<String>,
    /// Documents retrieved per option.
    #[arg(long, value_parser = clap::value_parser!(usize))]
    k: Option<usize>,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_algo(s: &str) -> Result<String, String> {
    s.parse::<Algo>().map(|a| a.to_string()).map_err(|e| e.to_string())
}

fn parse_metric(s: &str) -> Result<String, String> {
    s.parse::<UtilityMetric>().map(|m| m.to_string()).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> Result<String, String> {
    s.parse::<SplitScheme>().map(|m| m.to_string()).map_err(|e| e.to_string())
}

impl Command {
    fn parts(&self) -> (Stage, &Common) {
        match self {
            Command::Ingest(c) => (Stage::Ingest, c),
            Command::Index(c) => (Stage::Index, c),
            Command::Split(c) => (Stage::Split, c),
            Command::Features(c) => (Stage::Features, c),
            Command::Label(c) => (Stage::Label, c),
            Command::Train(c) => (Stage::Train, c),
            Command::Route(c) => (Stage::Route, c),
            Command::Eval(c) => (Stage::Eval, c),
            Command::Report(c) => (Stage::Report, c),
            Command::Pipeline(c) => (Stage::Pipeline, c),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (stage, common) = cli.command.parts();
    let mut cfg = RunConfig::load(&common.config)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    let overrides = Overrides {
        seed: common.seed,
        algo: common.algo.clone(),
        metric: common.metric.clone(),
        split: common.split.clone(),
        k: common.k,
        out: common.out.clone(),
    };
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    cfg.apply(&overrides, env_out)?;

    let mut run = Run::new(cfg)?;
    let manifest = run.execute(stage)?;
    let out = run.output_dir();
    println!("{stage}: config {} -> {}", manifest.config_fingerprint, out.display());
    for f in &manifest.outputs {
        println!("  {f}");
    }
    if matches!(stage, Stage::Report | Stage::Pipeline) {
        let grid = std::fs::read_to_string(out.join(REPORT_TXT))?;
        println!("\n{grid}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

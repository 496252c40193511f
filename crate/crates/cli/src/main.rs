//! `sgnn`: signed GNN pipeline driven by one JSON config.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, CONFIG_HELP};
use error::CliError;
use run::RunDir;

#[derive(Parser)]
#[command(name = "sgnn", version, about = "Interpretable signed GNN for functional-connectivity graphs", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score images against category lexicons and assign splits (labels.json)
    #[command(after_help = CONFIG_HELP)]
    FuseLabels(RunArgs),
    /// Assemble trial blocks into signed connectivity graphs (graphs.bin)
    #[command(after_help = CONFIG_HELP)]
    BuildGraphs(RunArgs),
    /// Generate the synthetic planted-subnetwork harness
    #[command(after_help = CONFIG_HELP)]
    Synth(RunArgs),
    /// Train a model (checkpoint.bin, history.csv)
    #[command(after_help = CONFIG_HELP)]
    Train(RunArgs),
    /// Test-split accuracy and average precision (metrics.json)
    #[command(after_help = CONFIG_HELP)]
    Eval(RunArgs),
    /// Global mask and class saliency maps (relevance_*.csv, nodes_*.csv)
    #[command(after_help = CONFIG_HELP)]
    Explain(RunArgs),
    /// Pooled graph embeddings (embeddings.csv)
    #[command(after_help = CONFIG_HELP)]
    Embed(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// JSON config; defaults apply to every missing key
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to <paths.output_dir>/<subcommand>-<timestamp>
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `paths.annotations`
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Overrides `paths.lexicon`
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Overrides `paths.manifest`
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides `paths.labels`
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Overrides `paths.graphs`
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Overrides `paths.checkpoint`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides `paths.ground_truth`
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Overrides `paths.parcel_names`
    #[arg(long)]
    parcel_names: Option<PathBuf>,
    /// Overrides `paths.output_dir`
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let p = &mut cfg.paths;
        for (slot, value) in [
            (&mut p.annotations, &self.annotations),
            (&mut p.lexicon, &self.lexicon),
            (&mut p.manifest, &self.manifest),
            (&mut p.labels, &self.labels),
            (&mut p.graphs, &self.graphs),
            (&mut p.checkpoint, &self.checkpoint),
            (&mut p.ground_truth, &self.ground_truth),
            (&mut p.parcel_names, &self.parcel_names),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if let Some(dir) = &self.output_dir {
            p.output_dir.clone_from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

type Handler = fn(&RunConfig, &RunDir) -> Result<(), CliError>;

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let (name, args, handler): (&str, &RunArgs, Handler) = match &cli.command {
        Command::FuseLabels(a) => ("fuse-labels", a, commands::fuse),
        Command::BuildGraphs(a) => ("build-graphs", a, commands::build_graphs),
        Command::Synth(a) => ("synth", a, commands::synth),
        Command::Train(a) => ("train", a, commands::train_model),
        Command::Eval(a) => ("eval", a, commands::eval),
        Command::Explain(a) => ("explain", a, commands::explain),
        Command::Embed(a) => ("embed", a, commands::embed),
    };
    let cfg = args.resolve()?;
    let dir = RunDir::create(name, &cfg, args.out.as_deref())?;
    handler(&cfg, &dir)?;
    Ok(dir.path)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

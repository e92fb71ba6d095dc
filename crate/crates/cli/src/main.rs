//! `glemiml` command-line interface.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glemiml::Ablation;

use config::{ExperimentConfig, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(name = "glemiml", version, about = "Graph-based label enhancement for MIML data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with known label distributions.
    Synth(SynthArgs),
    /// Split, train, and evaluate on the test split.
    Train(RunArgs),
    /// Train the full model and its three ablations.
    Ablate(AblateArgs),
    /// Evaluate a saved model.
    Evaluate(EvaluateArgs),
    /// Rank methods across report files.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// `default` or `key=value,...` (num_bags, feature_dim, label_count,
    /// instances_min, instances_max, seed).
    #[arg(long, default_value = "default")]
    synth: String,
    /// Dataset file to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground-truth distributions as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (JSON lines).
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Synthetic data spec instead of a file.
    #[arg(long)]
    synth: Option<String>,
    /// Seed for training and splitting.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// sgd or adam.
    #[arg(long)]
    optimizer: Option<String>,
    /// mse or signed-sum.
    #[arg(long)]
    similarity: Option<String>,
    /// Classifier depth (1, 2 or 3).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    instance_k: Option<usize>,
    #[arg(long)]
    label_k: Option<usize>,
    /// Enhancer loss weights as three comma-separated values.
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma_pos: Option<f64>,
    #[arg(long)]
    gamma_neg: Option<f64>,
    /// Output directory; defaults to <output root>/<command>-<config hash>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "GLEMIML_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Write recovered distributions for every bag to distributions.csv.
    #[arg(long)]
    export_distributions: bool,
    /// Write label and instance graph adjacency/Laplacian CSVs.
    #[arg(long)]
    dump_graph: bool,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Restrict to these variants (full, A, B, C).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train` (model.json).
    #[arg(long)]
    model: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write the report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files from `train`, `evaluate` or `ablate`.
    inputs: Vec<PathBuf>,
    /// Also write the ranked table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn data_overrides(d: &DataArgs) -> Overrides {
    Overrides {
        data: d.data.clone(),
        synth: d.synth.clone(),
        seed: d.seed,
        ..Overrides::default()
    }
}

fn resolve(a: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(a.data.config.as_deref())?;
    let beta = match &a.beta {
        Some(b) => Some(<[f64; 3]>::try_from(b.as_slice()).map_err(|_| CliError::Config("--beta takes three values".into()))?),
        None => None,
    };
    cfg.apply(&Overrides {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        optimizer: a.optimizer.clone(),
        similarity: a.similarity.clone(),
        depth: a.depth,
        embed_dim: a.embed_dim,
        instance_k: a.instance_k,
        label_k: a.label_k,
        beta,
        rho: a.rho,
        gamma_pos: a.gamma_pos,
        gamma_neg: a.gamma_neg,
        out: a.out.clone(),
        checkpoint_every: a.checkpoint_every,
        export_distributions: a.export_distributions,
        dump_graph: a.dump_graph,
        ..data_overrides(&a.data)
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a.synth, &a.out, a.truth.as_deref()),
        Command::Train(a) => {
            let cfg = resolve(&a)?;
            if a.print_config {
                return cfg.to_toml();
            }
            commands::train(&cfg, a.output_root.as_deref())
        }
        Command::Ablate(a) => {
            let cfg = resolve(&a.run)?;
            if a.run.print_config {
                return cfg.to_toml();
            }
            let only = a
                .only
                .iter()
                .map(|s| s.parse::<Ablation>())
                .collect::<Result<Vec<_>, _>>()?;
            commands::ablate(&cfg, &only, a.run.output_root.as_deref())
        }
        Command::Evaluate(a) => {
            let mut cfg = ExperimentConfig::load(a.data.config.as_deref())?;
            cfg.apply(&data_overrides(&a.data))?;
            commands::evaluate_cmd(&cfg, &a.model, &a.split, a.report.as_deref())
        }
        Command::Report(a) => commands::report(&a.inputs, a.json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `ttflab`: generate data, train force fields, probe them and measure how long they stay stable.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{LossSet, OptimizerKind};

#[derive(Parser)]
#[command(name = "ttflab", version, about, propagate_version = true)]
struct Cli {
    /// TOML file layered over the preset; relative paths in it resolve against its directory
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Built-in preset: desk, fragile or paper-analog [default: desk, or the file's `preset` key]
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Root seed; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults to <runs_dir>/<timestamp>-<command>
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample oracle NVT trajectories into dataset.jsonl
    GenData(GenDataArgs),
    /// Train a force field; writes model.json and train_log.csv
    Train(TrainArgs),
    /// Run MD with a model or the oracle; writes trajectory.xyz and thermo.csv
    Simulate(SimulateArgs),
    /// Time-to-failure runs; writes ttf.csv, outliers.jsonl and, when possible, fit.json
    Ttf(TtfArgs),
    /// Train one model per rho and compare lifetimes; writes sweep.csv and sweep.json
    RhoSweep(SweepArgs),
    /// Random-sphere sharpness of a trained model; writes sharpness.json
    Sharpness(SharpnessArgs),
    /// One-dimensional loss scan along a random direction; writes scan.json
    LossScan(LossScanArgs),
    /// Power-law fit of lifetimes from a ttf.csv; writes fit.json
    Fit(FitArgs),
    /// Weak-scaling benchmark of the domain-decomposed force loop; writes scaling.csv
    BenchParallel(BenchArgs),
    /// Print the fully resolved configuration as TOML
    ShowConfig,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_atoms: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset written by gen-data
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    /// Neighborhood radius for sam
    #[arg(long)]
    rho: Option<f64>,
    /// Epoch cap
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Ensemble {
    Nve,
    Nvt,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model checkpoint; the oracle is used when absent
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nvt")]
    ensemble: Ensemble,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long)]
    n_atoms: Option<usize>,
    /// Steps between trajectory frames and thermo rows
    #[arg(long, default_value_t = 100)]
    every: usize,
}

#[derive(Args)]
struct TtfArgs {
    /// Model checkpoint
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    model: Option<PathBuf>,
    /// Run the oracle itself as a control
    #[arg(long)]
    oracle: bool,
    /// Training dataset, for the force-outlier baseline
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated system sizes
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Number of run seeds (0..N)
    #[arg(long)]
    seeds: Option<u64>,
    /// Total step cap per run, thermalization included
    #[arg(long)]
    max_steps: Option<usize>,
    /// Concurrent runs; 0 uses every core
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated rho values; 0 means plain Adam
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    n_atoms: Option<usize>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SharpnessArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Probe radius
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    loss_set: Option<LossSet>,
}

#[derive(Args)]
struct LossScanArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    points: Option<usize>,
    /// Displacement length at the ends of the scan
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, value_enum)]
    loss_set: Option<LossSet>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with n_atoms, steps_survived and failure_reason columns
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated worker counts
    #[arg(long, value_delimiter = ',')]
    workers_list: Option<Vec<usize>>,
    #[arg(long)]
    atoms_per_domain: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Benchmark a model instead of the oracle
    #[arg(long)]
    model: Option<PathBuf>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Simulate(_) => "simulate",
        Command::Ttf(_) => "ttf",
        Command::RhoSweep(_) => "rho-sweep",
        Command::Sharpness(_) => "sharpness",
        Command::LossScan(_) => "loss-scan",
        Command::Fit(_) => "fit",
        Command::BenchParallel(_) => "bench-parallel",
        Command::ShowConfig => "show-config",
    }
}

fn error_line(command: &str, kind: &str, message: &str) {
    let line = serde_json::json!({ "status": "error", "command": command, "kind": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            error_line("", "usage", e.kind().as_str().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let name = command_name(&cli.command);
    let mut cfg = match config::load(cli.preset.as_deref(), cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            error_line(name, "config", &format!("{e:#}"));
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ctx = commands::Context { config: cfg, out: cli.out, command: name };
    match commands::dispatch(ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(name, "runtime", &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

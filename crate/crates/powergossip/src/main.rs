//! Command-line front end: each verb loads a JSON config, checks that the
//! config's `kind` matches the verb, and runs it. `--seed` overrides the
//! config's seed. Exit codes: 0 success, 2 config or argument errors, 3
//! numerical invariant violations, 4 i/o errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use powergossip::harness::{run, run_sweep, ExperimentConfig, RunRows};
use powergossip::{Error, Result};

#[derive(Parser)]
#[command(
    name = "powergossip",
    version,
    about = "Gossip consensus and decentralized SGD simulator with compressed communication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to the base JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Path to a JSON grid: an object mapping dotted config paths to arrays
    /// of values.
    #[arg(long)]
    grid: PathBuf,
    /// Overrides the base config's seed (per-point seeds derive from it).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a gossip consensus experiment.
    Consensus(RunArgs),
    /// Run a decentralized SGD experiment.
    Optimize(RunArgs),
    /// Report the singular spectrum of a saved matrix.
    Spectrum(RunArgs),
    /// Report the floats saved by low-rank difference compression.
    Ratio(RunArgs),
    /// Run a grid of experiments derived from one base config.
    Sweep(SweepArgs),
}

fn load(args: &RunArgs, expected: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if cfg.kind_name() != expected {
        return Err(Error::config(format!(
            "{} holds a `{}` config, but the `{expected}` command was invoked",
            args.config.display(),
            cfg.kind_name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed)?;
    }
    Ok(cfg)
}

fn execute(args: &RunArgs, expected: &str) -> Result<()> {
    let cfg = load(args, expected)?;
    let has_output = cfg.echo().get("output").is_some();
    let record = run(&cfg)?;
    match &record.rows {
        RunRows::Ratio { value } => println!("{value}"),
        RunRows::Spectrum { .. } | RunRows::Consensus { .. } | RunRows::Optimize { .. }
            if !has_output =>
        {
            print!("{}", record.csv());
        }
        RunRows::Consensus { rows } => {
            let last = rows.last().expect("run_consensus emits round 0");
            println!(
                "consensus: {} rounds, error {:e}, bits/node {:e}",
                last.round, last.error, last.bits_per_node
            );
        }
        RunRows::Optimize { rows } => {
            let last = rows.last().expect("run_optimize emits round 0");
            println!(
                "optimize: {} rounds, objective gap {:e}, selected round {}",
                last.round,
                last.obj_gap,
                record.derived.selected_round.unwrap_or(0)
            );
        }
        RunRows::Spectrum { .. } => {}
    }
    Ok(())
}

fn execute_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if !matches!(cfg.kind_name(), "consensus" | "optimize") {
        return Err(Error::config(format!(
            "sweeps need a consensus or optimize base config, got `{}`",
            cfg.kind_name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed)?;
    }
    let grid_text = std::fs::read_to_string(&args.grid)
        .map_err(|e| Error::io(args.grid.display().to_string(), e))?;
    let grid: serde_json::Value = serde_json::from_str(&grid_text)?;
    let outcome = run_sweep(&cfg, &grid)?;
    if cfg.echo().get("output").is_some() {
        println!(
            "sweep: {} points, best point {}",
            outcome.points.len(),
            outcome.best_index
        );
    } else {
        print!("{}", outcome.summary_csv);
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Consensus(args) => execute(args, "consensus"),
        Command::Optimize(args) => execute(args, "optimize"),
        Command::Spectrum(args) => execute(args, "spectrum"),
        Command::Ratio(args) => execute(args, "ratio"),
        Command::Sweep(args) => execute_sweep(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

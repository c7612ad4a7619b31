use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dont_core::experiments::presets::preset;
use dont_core::experiments::{
    eval_checkpoint, oracle, plot_checkpoint, run_1d_dynamics, run_experiment, run_gain_sweep,
    run_illposed_demo, ExperimentConfig, RunOptions, RunStatus,
};
use dont_core::Error;

#[derive(Parser)]
#[command(
    name = "dont",
    version,
    about = "Dynamic optimal transport experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, score it and write its artifacts.
    Train(Common),
    /// Re-score the checkpoint in the output directory.
    Eval(Common),
    /// Print the exact transport solution of the dataset as JSON.
    Oracle(Common),
    /// Initialization-gain sweep of the cycle baseline and DONT.
    Sweep(Common),
    /// Per-step marginals of a 1-D flow against the geodesic.
    Dynamics(Common),
    /// Coherent invertible rotations and their transport cost.
    Illposed(Common),
    /// Redraw the SVGs of the checkpoint in the output directory.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON experiment file.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the first entry of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Invert with the fixed-point solver when measuring round trips.
    #[arg(long)]
    exact_inverse: bool,
    /// Concurrent sweep runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> dont_core::Result<(ExperimentConfig, PathBuf, RunOptions)> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => {
                return Err(Error::Config(
                    "either --config or --preset is required".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            match cfg.seeds.first_mut() {
                Some(first) => *first = seed,
                None => cfg.seeds.push(seed),
            }
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        cfg.output_dir = out.display().to_string();
        let opts = RunOptions {
            exact_inverse: self.exact_inverse,
            jobs: self.jobs.max(1),
        };
        Ok((cfg, out, opts))
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> dont_core::Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Maps the outcome to the process exit code: 0 success, 2 configuration
/// error, 3 divergence, 1 anything else.
fn run(command: Command) -> dont_core::Result<RunStatus> {
    match command {
        Command::Train(c) => {
            let (cfg, out, opts) = c.load()?;
            let report = run_experiment(&cfg, &out, &opts)?;
            print_json(&report)?;
            Ok(report.status)
        }
        Command::Eval(c) => {
            let (cfg, out, opts) = c.load()?;
            let report = eval_checkpoint(&cfg, &out, &opts)?;
            print_json(&report)?;
            Ok(report.status)
        }
        Command::Oracle(c) => {
            let (cfg, _, _) = c.load()?;
            print_json(&oracle(&cfg)?)?;
            Ok(RunStatus::Ok)
        }
        Command::Sweep(c) => {
            let (cfg, out, opts) = c.load()?;
            print_json(&run_gain_sweep(&cfg, &out, &opts)?)?;
            Ok(RunStatus::Ok)
        }
        Command::Dynamics(c) => {
            let (cfg, out, opts) = c.load()?;
            let report = run_1d_dynamics(&cfg, &out, &opts)?;
            print_json(&report)?;
            Ok(report.status)
        }
        Command::Illposed(c) => {
            let (cfg, out, _) = c.load()?;
            let report = run_illposed_demo(&cfg, &out)?;
            print_json(&report)?;
            Ok(report.status)
        }
        Command::Plot(c) => {
            let (cfg, out, _) = c.load()?;
            plot_checkpoint(&cfg, &out)?;
            Ok(RunStatus::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(RunStatus::Ok) => ExitCode::SUCCESS,
        Ok(RunStatus::Diverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                e if e.is_divergence() => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

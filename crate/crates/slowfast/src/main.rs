use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slowfast::cli::{self, Experiment, ExperimentConfig};

/// Slow-fast SDE analysis: manifolds, concentration metrics, first-exit
/// statistics and bifurcation scaling experiments.
#[derive(Parser)]
#[command(name = "slowfast", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slow-manifold scan over a y-grid (CSV: x*, x1, stability).
    Manifold(RunArgs),
    /// Concentration metric scan (CSV: X̄, Z̄, condition, controllability).
    Metric(RunArgs),
    /// Reduced orbit with principal-solution norms, χ-functions, covariance.
    Flow(RunArgs),
    /// Monte Carlo ensemble of full/linearized/reduced paths.
    Simulate(RunArgs),
    /// Exit probabilities over an h-grid with the fitted tail exponent.
    ExitProb(RunArgs),
    /// Dynamic-pitchfork spreading and escape-time scaling.
    Pitchfork(RunArgs),
    /// Pathwise-coupled full-vs-reduced deviation statistics.
    CompareReduced(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override (also via SLOWFAST_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::Manifold(_) => Experiment::Manifold,
            Command::Metric(_) => Experiment::Metric,
            Command::Flow(_) => Experiment::Flow,
            Command::Simulate(_) => Experiment::Simulate,
            Command::ExitProb(_) => Experiment::ExitProb,
            Command::Pitchfork(_) => Experiment::Pitchfork,
            Command::CompareReduced(_) => Experiment::CompareReduced,
        }
    }

    fn run_args(&self) -> &RunArgs {
        match self {
            Command::Manifold(a)
            | Command::Metric(a)
            | Command::Flow(a)
            | Command::Simulate(a)
            | Command::ExitProb(a)
            | Command::Pitchfork(a)
            | Command::CompareReduced(a) => a,
        }
    }
}

fn main() -> ExitCode {
    cli::init_workers();
    let args = Args::parse();
    let run = args.command.run_args();
    let mut config = match ExperimentConfig::from_file(&run.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("slowfast: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    config.experiment = args.command.experiment();
    if let Some(seed) = run.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &run.out {
        config.output_dir = out.clone();
    }
    match cli::run_experiment(&config) {
        Ok(manifest) => {
            println!(
                "{}: wrote {} file(s) to {} in {:.2}s",
                config.experiment.as_str(),
                manifest.files.len(),
                config.output_dir.display(),
                manifest.wall_time_s
            );
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("slowfast: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

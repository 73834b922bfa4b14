use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mirrordyn::cli::{cmd_complexity, cmd_mc, cmd_run, cmd_validate, with_pool};

/// Stochastic Markov mirror descent: runs, tail experiments, and solvers.
#[derive(Parser)]
#[command(name = "mirrordyn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and export CSV diagnostics plus a JSON summary.
    Run {
        /// Experiment configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Base-seed override (beats MIRRORDYN_SEED and the config value).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for replications.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Monte-Carlo tail experiment against the concentration bounds.
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Iteration count required by the sample-complexity clauses.
    Complexity {
        #[arg(long)]
        config: PathBuf,
        /// Target accuracy (defaults to the first experiment.eps_grid entry).
        #[arg(long)]
        eps: Option<f64>,
        /// Target failure probability (defaults to experiment.p).
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-module property suite; exit 0 iff every check passes.
    Validate {
        /// Validate the problem from this config file.
        #[arg(long, conflicts_with = "builtin")]
        config: Option<PathBuf>,
        /// Validate the built-in reference problems.
        #[arg(long)]
        builtin: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            seed,
            out,
            jobs,
        } => with_pool(*jobs, || cmd_run(config, *seed, out)),
        Command::Mc {
            config,
            seed,
            out,
            jobs,
        } => with_pool(*jobs, || cmd_mc(config, *seed, out)),
        Command::Complexity {
            config,
            eps,
            p,
            seed,
            out,
        } => cmd_complexity(config, *eps, *p, *seed, out),
        Command::Validate {
            config,
            builtin,
            seed,
            jobs,
        } => with_pool(*jobs, || cmd_validate(config.as_deref(), *builtin, *seed)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mirrordyn: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

//! Command-line front end for the experiment harness.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 solver or chain
//! divergence (partial trace written), 4 capability (dimension above the
//! enumeration cap).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maxent_smc::harness::{self, ExperimentConfig, Mode, Overrides};
use maxent_smc::Error;

#[derive(Parser)]
#[command(
    name = "maxent",
    version,
    about = "Maximum-entropy reconstruction of binary-state distributions",
    long_about = "Reconstructs maximum-entropy (Ising-type) distributions over d-bit states \
                  from exact or empirical moments, and quantifies posterior uncertainty over \
                  the model parameters. Each subcommand takes a JSON config document; see the \
                  repository README for the schema and examples."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw observations from a configured model and write an observation file
    Simulate(RunArgs),
    /// Fit the MaxEnt distribution to exact target moments
    Maxent(RunArgs),
    /// Fit by maximum likelihood from an observation file
    Mle(RunArgs),
    /// Sample the Bayesian posterior over the parameters with SGLD
    Posterior(RunArgs),
    /// Exact partition function, moments, and entropy by enumeration
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (default: config, then $MAXENT_OUT_DIR)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run this many independently seeded replicates (maxent/mle only)
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Override the enumeration cap
    #[arg(long)]
    d_cap: Option<usize>,
    /// Allow approximate MCMC sampling beyond the enumeration cap (simulate)
    #[arg(long)]
    mcmc_sampling: bool,
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Command::Simulate(_) => Mode::Simulate,
            Command::Maxent(_) => Mode::MaxentExact,
            Command::Mle(_) => Mode::Mle,
            Command::Posterior(_) => Mode::Posterior,
            Command::Oracle(_) => Mode::Oracle,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Maxent(a)
            | Command::Mle(a)
            | Command::Posterior(a)
            | Command::Oracle(a) => a,
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } | Error::ChainDiverged { .. } => 3,
        Error::OracleCapExceeded { .. } => 4,
        Error::InvalidConfig(_)
        | Error::ObservationFormat(_)
        | Error::DimensionMismatch { .. }
        | Error::NonFinite { .. } => 2,
        Error::Io(_) | Error::OutputFormat(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = cli.command.mode();
    let args = cli.command.args();

    let mut config = match ExperimentConfig::from_path(&args.config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("maxent: {err}");
            return ExitCode::from(2);
        }
    };
    if config.mode != mode {
        eprintln!(
            "maxent: config mode {} does not match the `{}` subcommand",
            config.mode.name(),
            mode.name()
        );
        return ExitCode::from(2);
    }
    config.apply_overrides(&Overrides {
        seed: args.seed,
        out_dir: args.out_dir.clone(),
        d_cap: args.d_cap,
        mcmc_sampling: args.mcmc_sampling,
    });

    match harness::run(&config, args.replicates) {
        Ok(files) => {
            for file in files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("maxent: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

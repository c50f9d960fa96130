use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reset_opt_cli::commands::{cmd_diagnose, cmd_mfpt, cmd_sweep, cmd_train, RunOptions};
use reset_opt_cli::output::OutputDir;
#[cfg(feature = "parallel")]
use reset_opt_cli::CliError;
use reset_opt_cli::{ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "reset-opt", version, about = "SGD with stochastic resetting: experiments and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "RESET_OPT_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Overrides the config's seed_base.
    #[arg(long)]
    seed_base: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// First-passage times under resetting: Monte Carlo vs closed form.
    Mfpt(Common),
    /// Seeded training runs.
    Train(Common),
    /// Reset-rate sweep along one axis.
    Sweep(Common),
    /// Training with drift / diffusion diagnostics.
    Diagnose(Common),
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Mfpt(c) => ("mfpt", c),
        Command::Train(c) => ("train", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Diagnose(c) => ("diagnose", c),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed_base {
        cfg.seed_base = s;
    }
    let out = OutputDir::create(&common.out)?;
    let opts = RunOptions::default();
    let work = move || -> Result<()> {
        let mut out = out;
        match name {
            "mfpt" => cmd_mfpt(&cfg, &mut out, opts).map(|_| ()),
            "train" => cmd_train(&cfg, &mut out, opts).map(|_| ()),
            "sweep" => cmd_sweep(&cfg, &mut out, opts).map(|_| ()),
            _ => cmd_diagnose(&cfg, &mut out, opts).map(|_| ()),
        }
    };
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(common.workers)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        pool.install(work)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = common.workers;
        work()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reset-opt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

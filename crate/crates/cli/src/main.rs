use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codex_cli::pipeline::{output_dir, run_bin, run_metrics, run_reconstruct, run_simulate, run_sweep};
use codex_cli::{ExperimentConfig, Failure};

#[derive(Parser)]
#[command(name = "codex", version, about = "Coded-exposure fly-scan CT simulation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantom, photon counts and log projections.
    Simulate,
    /// Reconstruct from a data directory written by `simulate` or `bin`.
    Reconstruct {
        /// Data directory; defaults to the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Code dense micro-angle projections into view data.
    Bin {
        /// Dense `.f32` array with `N_theta` rows.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the flux/code-length grid from the config's `sweep` section.
    Sweep,
    /// Score a reconstruction against a reference or the configured phantom.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Parse and validate a config, printing its normalized form.
    ValidateConfig,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli.common.config.ok_or_else(|| Failure::config("--config is required"))?;
    let mut config = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::ValidateConfig => {
            println!("{}", config.to_json());
            return Ok(());
        }
        Command::Simulate => {
            let out = output_dir(cli.common.out, &config)?;
            run_simulate(&config, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Reconstruct { data } => {
            let out = output_dir(cli.common.out, &config)?;
            let data = data.unwrap_or_else(|| out.clone());
            let metrics = run_reconstruct(&config, &data, &out)?;
            println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
        }
        Command::Bin { input } => {
            let out = output_dir(cli.common.out, &config)?;
            run_bin(&config, &input, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Sweep => {
            let out = output_dir(cli.common.out, &config)?;
            let rows = run_sweep(&config, &out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {failed} failed; wrote {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::Metrics { input, reference } => {
            let out = output_dir(cli.common.out, &config)?;
            let metrics = run_metrics(&config, &input, reference.as_deref(), &out)?;
            println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

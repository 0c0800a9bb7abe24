//! Command-line front end: single runs, sweeps, figure-data export, and
//! config validation.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime numeric failure,
//! 1 anything else (I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpa_core::config::{ConfigError, RunConfig};
use dpa_core::export::export_figdata;
use dpa_core::sweep::{run_single, sweep, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Output root override; takes precedence over `output.root` in the config.
const OUTPUT_ROOT_ENV: &str = "DPA_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "dpa",
    about = "Dual probabilistic alignment trainer on synthetic universal domain adaptation scenarios",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics + evaluation.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory (default: <output root>/run-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenario seed (default: first entry of scenario.seeds).
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the configured sweep (beta values or ablation variants) x seeds.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory (default: <output root>/sweep).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Extract plot-ready iteration series from metrics CSVs.
    ExportFigdata {
        /// Metrics CSV files produced by `run` or `sweep`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory for the series files.
        #[arg(long, default_value = "figdata")]
        out: PathBuf,
    },
    /// Parse and validate a config, printing the normalized document.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Export(#[from] dpa_core::export::ExportError),
    #[error("all {0} sweep runs failed")]
    SweepAllFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(RunError::Config(_)) | CliError::Run(RunError::Scenario(_)) => {
                EXIT_CONFIG
            }
            CliError::Run(RunError::Train(_)) | CliError::SweepAllFailed(_) => EXIT_NUMERIC,
            CliError::Run(RunError::Io { .. }) | CliError::Export(_) => 1,
        }
    }
}

fn output_root(cfg: &RunConfig) -> PathBuf {
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root),
        _ => PathBuf::from(&cfg.output.root),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, quiet } => {
            let cfg = RunConfig::from_path(&config.config)?;
            let seed = seed.unwrap_or_else(|| cfg.scenario.seeds.first().copied().unwrap_or(0));
            let out_dir =
                out.unwrap_or_else(|| output_root(&cfg).join(format!("run-seed{seed}")));
            let artifacts = run_single(&cfg, seed, &out_dir)?;
            if !quiet {
                println!("run complete: seed {seed}, {} metric rows", artifacts.rows.len());
                println!("  out:                    {}", artifacts.out_dir.display());
                println!(
                    "  target shared accuracy: {:.4}",
                    artifacts.evaluation.target_shared_accuracy
                );
                println!(
                    "  alignment score:        {:.4}",
                    artifacts.evaluation.alignment_score
                );
            }
            Ok(())
        }
        Command::Sweep { config, out, workers, quiet } => {
            let cfg = RunConfig::from_path(&config.config)?;
            let out_dir = out.unwrap_or_else(|| output_root(&cfg).join("sweep"));
            let workers = workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            });
            let outcome = sweep(&cfg, &out_dir, workers)?;
            if !quiet {
                println!(
                    "sweep complete: {} runs, {} aggregates",
                    outcome.runs.len(),
                    outcome.aggregates.len()
                );
                for a in &outcome.aggregates {
                    println!(
                        "  {:<10} acc {:.4} +- {:.4} (ok {}, failed {})",
                        a.label, a.acc_mean, a.acc_std, a.runs_ok, a.runs_failed
                    );
                }
                println!("  summary: {}", outcome.summary_path.display());
            }
            let failed = outcome.runs.iter().filter(|r| r.status != "ok").count();
            if !outcome.runs.is_empty() && failed == outcome.runs.len() {
                return Err(CliError::SweepAllFailed(failed));
            }
            Ok(())
        }
        Command::ExportFigdata { inputs, out } => {
            let written = export_figdata(&inputs, &out)?;
            println!("wrote {} series files to {}", written.len(), out.display());
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::from_path(&config.config)?;
            // realizability check for the configured beta
            cfg.build_scenario(cfg.scenario.seeds.first().copied().unwrap_or(0))
                .map_err(ConfigError::from)?;
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

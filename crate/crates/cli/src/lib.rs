//! Command-line front end: launch experiment runs from a manifest, emit
//! report and calibration data files, replay run artifacts, and serve the
//! rollout protocol.
//!
//! Exit codes: 0 success, 1 run/data failures, 2 configuration errors.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::calibrate::{cmd_calibrate, CalibrateOptions};
use commands::replay::{cmd_replay, ReplayOptions};
use commands::report::{cmd_report, ReportOptions};
use commands::run::{cmd_run, RunOptions};
use commands::serve::{cmd_serve, ServeOptions};
use manifest::Condition;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;

/// Marker for failures that must exit with [`EXIT_CONFIG_ERROR`]: bad
/// manifests, invalid configurations, unknown conditions.
#[derive(Debug)]
pub struct ConfigProblem(pub String);

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

/// Wraps any error as a configuration problem.
pub fn config_problem(error: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(error.to_string()))
}

#[derive(Parser)]
#[command(
    name = "evoskill",
    about = "Evolve natural-language agent skills with dense rollout metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute all runs listed in an experiment manifest.
    Run {
        /// Experiment manifest (YAML).
        #[arg(long)]
        manifest: PathBuf,
        /// Only run entries with this condition (C1..C4).
        #[arg(long)]
        condition: Option<Condition>,
        /// Force the deterministic simulator services even when the
        /// manifest configures model endpoints.
        #[arg(long)]
        simulator: bool,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the manifest's output root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Maximum concurrent task runs.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Replay every completed run afterwards and fail on diffs.
        #[arg(long)]
        replay: bool,
    },
    /// Emit per-generation quality tables and the pass grid from run roots.
    Report {
        /// Run directories or parents of run directories.
        roots: Vec<PathBuf>,
        /// Output directory for the data files.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Compute score/pass calibration from rollout diagnostics.
    Calibrate {
        /// Diagnostic files or directories to scan.
        inputs: Vec<PathBuf>,
        /// Output directory for the calibration files.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Recompute metrics from run artifacts and fail on any divergence.
    Replay {
        roots: Vec<PathBuf>,
    },
    /// Serve the rollout protocol over a scenario directory.
    Serve {
        /// Directory of scenario JSON documents.
        #[arg(long)]
        scenarios: PathBuf,
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1:8098")]
        addr: String,
        /// Directory for per-rollout trace files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(error) => {
            // Help/version are successful exits; bad flags are config errors.
            let _ = error.print();
            return if error.use_stderr() { EXIT_CONFIG_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run {
            manifest,
            condition,
            simulator,
            seed,
            out,
            parallel,
            replay,
        } => cmd_run(&RunOptions {
            manifest,
            condition,
            simulator,
            seed,
            out,
            parallel,
            replay,
        }),
        Command::Report { roots, out } => cmd_report(&ReportOptions { roots, out }),
        Command::Calibrate { inputs, out } => cmd_calibrate(&CalibrateOptions { inputs, out }),
        Command::Replay { roots } => cmd_replay(&ReplayOptions { roots }),
        Command::Serve { scenarios, addr, out } => cmd_serve(&ServeOptions {
            scenarios,
            addr,
            out,
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            if error.downcast_ref::<ConfigProblem>().is_some()
                || error.downcast_ref::<evoskill_core::domain::ConfigError>().is_some()
            {
                EXIT_CONFIG_ERROR
            } else {
                EXIT_RUN_FAILURE
            }
        }
    }
}

//! `fedvarp-sim (run|sweep|verify)` command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Result, SimError};
use crate::harness::{self, RunConfig, RunOptions, SweepAxis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fedvarp-sim",
    version,
    about = "Federated optimisation simulator with server-side variance reduction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write metrics.csv and manifest.json.
    Run(ConfigArgs),
    /// Run one configuration per value of a swept parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of sigma_g_scale, M, eta_c, eta_s, tau, K, algo.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run the enumeration-oracle and equivalence checks.
    Verify,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Path of the JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path override, e.g. --set hyper.M=5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load_with_overrides(&self.config, &self.overrides)
    }
}

fn exit_code(e: &SimError) -> i32 {
    if e.is_configuration() {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

fn run_command(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            eprintln!(
                "running {} for {} rounds (N={}, M={}) into {}",
                cfg.algo.name,
                cfg.hyper.rounds,
                cfg.federation.num_clients,
                cfg.hyper.participants,
                cfg.output_dir.display()
            );
            let out = harness::run_to_dir(&cfg, &cfg.output_dir, RunOptions::parallel())?;
            if let Some(f) = &out.failure {
                eprintln!("run aborted at round {}: {}", f.round, f.message);
                return Ok(EXIT_FAILURE);
            }
            eprintln!(
                "done: final |grad f|^2 = {:.6e}, floor = {:.6e}",
                out.final_grad_norm_sq().unwrap_or(f64::NAN),
                out.floor().unwrap_or(f64::NAN)
            );
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let cfg = config.load()?;
            let axis: SweepAxis = axis.parse()?;
            eprintln!(
                "sweeping {axis} over {} values into {}",
                values.len(),
                cfg.output_dir.display()
            );
            let out = harness::sweep_to_dir(&cfg, axis, &values, RunOptions::default())?;
            let mut failed = false;
            for p in &out.points {
                match &p.outcome.failure {
                    None => eprintln!("  {axis}={}: floor {:.6e}", p.value, p.floor()),
                    Some(f) => {
                        failed = true;
                        eprintln!(
                            "  {axis}={}: aborted at round {}: {}",
                            p.value, f.round, f.message
                        )
                    }
                }
            }
            Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
        }
        Command::Verify => {
            let report = harness::verify();
            for c in &report.checks {
                eprintln!("{c}");
            }
            if report.passed() {
                eprintln!("all {} checks passed", report.checks.len());
                Ok(EXIT_OK)
            } else {
                Ok(EXIT_FAILURE)
            }
        }
    }
}

/// Parses `argv` and runs the command, returning the process exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

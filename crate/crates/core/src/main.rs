use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::error;

use randcontrol::campaign::run_mode;
use randcontrol::config::{validate_config_with, Mode, Overrides};
use randcontrol::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliMode {
    Brute,
    Randomized,
    Bsde,
    Oracle,
    Campaign,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Brute => Mode::Brute,
            CliMode::Randomized => Mode::Randomized,
            CliMode::Bsde => Mode::Bsde,
            CliMode::Oracle => Mode::Oracle,
            CliMode::Campaign => Mode::Campaign,
        }
    }
}

/// Value estimates for stochastic control benchmarks by brute force, randomized
/// intensity optimization and penalized BSDEs, checked against oracles.
///
/// Exit codes: 0 pass, 1 tolerance failure, 2 configuration error, 3 numerical error.
#[derive(Debug, Parser)]
#[command(name = "randcontrol", version = env!("RANDCONTROL_BUILD_ID"))]
struct Cli {
    #[arg(value_enum)]
    mode: CliMode,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; replaces the configuration value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Path count; replaces the configuration value.
    #[arg(long)]
    n_paths: Option<u64>,
    /// Write wall-clock seconds instead of NA in runtime columns.
    #[arg(long)]
    record_timings: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let raw = match std::fs::read_to_string(&cli.config) {
        Ok(r) => r,
        Err(e) => {
            error!("cannot read {}: {e}", cli.config.display());
            eprintln!("configuration error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        mode: Some(cli.mode.into()),
        seed: cli.seed,
        n_paths: cli.n_paths,
        out: Some(cli.out.display().to_string()),
    };
    let result = validate_config_with(&raw, &overrides).and_then(|cfg| run_mode(&cfg, Some(&cli.out), cli.record_timings));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary.trim_end());
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    if e.is_config() {
        eprintln!("configuration error: {e}");
        ExitCode::from(2)
    } else {
        eprintln!("numerical error: {e}");
        ExitCode::from(3)
    }
}

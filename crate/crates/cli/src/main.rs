//! `excursion`: fit excursion-effect estimators to MRT data, run
//! simulation studies, or sweep relative-efficiency curves.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error,
//! 5 non-convergence, 1 other (I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use excursion_cli::config::{Mode, RunConfig};
use excursion_cli::runner;

#[derive(Parser)]
#[command(name = "excursion", version, about)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's mode (fit | simulate | sweep).
    #[arg(long)]
    mode: Option<Mode>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count (simulate and sweep modes).
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads for replication-parallel work.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if let Some(out_dir) = cli.out_dir {
        config.out_dir = Some(out_dir);
    }
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(threads) = cli.threads {
        config.threads = Some(threads);
    }
    if let Some(reps) = cli.reps {
        if let Some(sim) = config.simulate.as_mut() {
            sim.reps = reps;
        }
        if let Some(sweep) = config.sweep.as_mut() {
            sweep.reps = reps;
        }
    }
    match runner::run(&config) {
        Ok(output) => {
            println!("{}", output.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

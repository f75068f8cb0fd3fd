use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use noisy_mpo_cli::config::{parse_config, ConfigError, Mode, Overrides};
use noisy_mpo_cli::run::{run, RunError};

/// Vectorized-MPO simulation of noisy circuits and Lindbladians with
/// truncation-error measurements.
///
/// Exit status: 0 success, 2 usage, 3 config, 4 experiment, 5 I/O.
#[derive(Debug, Parser)]
#[command(name = "noisy-mpo", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory for CSV files and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; child i uses a seed derived from it and i.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Also write the final truncated state of each run.
    #[arg(long)]
    dump_state: bool,
    #[arg(long)]
    delta_err: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn fail(class: &str, code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error[{class}]: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail("io", 5, format!("{}: {e}", path.display())),
        },
        None => String::new(),
    };
    let over = Overrides {
        mode: cli.mode,
        out: cli.out,
        seed: cli.seed,
        workers: cli.workers,
        dump_state: cli.dump_state,
        delta_err: cli.delta_err,
        realizations: cli.realizations,
    };
    let cfg = match parse_config(&text, &over) {
        Ok(c) => c,
        Err(e @ (ConfigError::Parse(_) | ConfigError::Missing(_) | ConfigError::Range { .. } | ConfigError::Sections(_))) => return fail("config", 3, e),
    };
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    match run(&cfg) {
        Ok(s) => {
            println!("{} run(s) written; manifest {}", s.children, s.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e @ RunError::Io(_)) => fail("io", 5, e),
        Err(e) => fail("experiment", 4, e),
    }
}

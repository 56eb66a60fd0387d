//! `echoarray`: PSF generation, power-map scans, chirp ranging, acquisition
//! emulation and frame-stream decoding from one binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Failure while processing data; exit code 3.
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<echoarray::Error> for CliError {
    fn from(e: echoarray::Error) -> Self {
        match e {
            echoarray::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "echoarray",
    version,
    about = "Circular-array ultrasonic sonar simulator"
)]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Master RNG seed (overrides `seed` from the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point spread functions for each configured source and beamformer.
    Psf,
    /// Power map and DOA peaks for a scene.
    Scan,
    /// Write the probing chirp.
    Chirp,
    /// Ping series against a simulated reflector, with per-ping ranges.
    Simulate,
    /// Parse a frame stream into per-channel PDM (and optionally PCM) files.
    Decode {
        /// Frame stream; `-` or omitted reads standard input.
        input: Option<PathBuf>,
        /// Also decimate every channel to PCM.
        #[arg(long)]
        decimate: bool,
    },
    /// Parser throughput benchmark.
    Bench,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::defaults(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| {
        CliError::Usage(format!(
            "cannot create output directory {}: {e}",
            cli.out.display()
        ))
    })?;
    std::fs::write(cli.out.join("run_config.txt"), cfg.to_text())?;
    match cli.command {
        Command::Psf => commands::psf(&cfg, &cli.out),
        Command::Scan => commands::scan(&cfg, &cli.out),
        Command::Chirp => commands::chirp(&cfg, &cli.out),
        Command::Simulate => commands::simulate(&cfg, &cli.out),
        Command::Decode { input, decimate } => {
            if decimate {
                cfg.set("decode.decimate", "true")?;
            }
            commands::decode(&cfg, &cli.out, input.as_deref())
        }
        Command::Bench => commands::bench(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Data(_) => 3,
            })
        }
    }
}

//! Batch command-line front end for nisqlab.
//!
//! Every run emits a versioned JSON report whose `results` payload is a
//! deterministic function of the inputs and `--seed`, independent of
//! `--threads`. Exit codes: 0 success, 1 numerical-consistency failure,
//! 2 input error, 3 resource budget exceeded.

mod commands;
mod noisefile;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nisqlab::ErrorCategory;

#[derive(Parser)]
#[command(
    name = "nisqlab",
    version,
    about = "Near-term quantum computing toolkit"
)]
pub struct Cli {
    /// RNG master seed for all sampled outputs (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (0 = available parallelism). Results do not depend
    /// on this setting.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Write the report to this path instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<std::path::PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// JSON config file supplying defaults for the global flags; explicit
    /// flags win.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Global settings after merging flags over the optional config file.
pub struct Settings {
    pub seed: u64,
    pub threads: usize,
    pub out: Option<std::path::PathBuf>,
    pub format: Format,
}

#[derive(serde::Deserialize, Default)]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<std::path::PathBuf>,
    format: Option<String>,
}

impl Cli {
    fn settings(&self) -> Result<Settings, nisqlab::Error> {
        let config: ConfigFile = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    nisqlab::Error::InvalidInput(format!("cannot read {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| nisqlab::Error::InvalidInput(format!("bad config file: {e}")))?
            }
            None => ConfigFile::default(),
        };
        let format = match (self.format, config.format.as_deref()) {
            (Some(f), _) => f,
            (None, Some("json")) | (None, None) => Format::Json,
            (None, Some("csv")) => Format::Csv,
            (None, Some(other)) => {
                return Err(nisqlab::Error::InvalidInput(format!(
                    "bad format `{other}` in config file"
                )))
            }
        };
        Ok(Settings {
            seed: self.seed.or(config.seed).unwrap_or(0),
            threads: self.threads.or(config.threads).unwrap_or(0),
            out: self.out.clone().or(config.out),
            format,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run a circuit on a simulator backend.
    Simulate(commands::SimulateArgs),
    /// Run a benchmarking protocol.
    Benchmark(commands::BenchmarkArgs),
    /// Apply an error-mitigation method.
    Mitigate(commands::MitigateArgs),
    /// Run compilation passes over a circuit.
    Compile(commands::CompileArgs),
    /// Cross-check all gradient methods on random parametric circuits.
    Gradcheck(commands::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.settings().and_then(|settings| {
        if settings.threads > 0 {
            // ignore failure: the global pool may already be initialized
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(settings.threads)
                .build_global();
        }
        commands::run(&cli.command, &settings)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err.category() {
                ErrorCategory::Input => ExitCode::from(2),
                ErrorCategory::Numerical => ExitCode::from(1),
                ErrorCategory::Budget => ExitCode::from(3),
            }
        }
    }
}

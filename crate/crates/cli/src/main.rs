//! `rotorlab`: runs one experiment from a TOML config and writes its CSVs and
//! a `manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 numerical failure.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation-error",
            CliError::Numerical(_) => "numerical-error",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<rotor_core::Error> for CliError {
    fn from(e: rotor_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    GibbsSample,
    OrderCheck,
    DriftCertify,
    Nonintegrability,
    TvCurve,
    EscapeTimes,
    RateFit,
    Selftest,
    /// Print the effective configuration and exit.
    ShowConfig,
}

impl Command {
    fn name(self) -> String {
        self.to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default()
    }
}

#[derive(Debug, Parser)]
#[command(name = "rotorlab", version, about = "Two-rotor heat-bath chain experiments")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML config; every field has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set model.gamma=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; overrides the config field.
    #[arg(long)]
    threads: Option<usize>,
    /// Run on a single worker so every reduction happens in a fixed order.
    #[arg(long)]
    deterministic_order: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: String,
    version: &'static str,
    seed: Option<u64>,
    status: &'a str,
    exit_code: u8,
    error: Option<String>,
    wall_time_s: f64,
    threads: usize,
    deterministic_order: bool,
    outputs: Vec<String>,
    notes: Vec<String>,
    config_path: Option<String>,
    overrides: &'a [String],
    config: Option<&'a ExperimentConfig>,
}

/// What a command produced, for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<String>,
    /// Set when the command ran but a check it performs failed.
    pub failure: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let start = Instant::now();
    let mut overrides = args.overrides.clone();
    if let Some(dir) = &args.output_dir {
        overrides.push(format!("output_dir={}", toml_string(dir)));
    }

    let loaded = ExperimentConfig::load(args.config.as_deref(), &overrides);
    let output_dir = match &loaded {
        Ok(cfg) => cfg.output_dir.clone(),
        Err(_) => args
            .output_dir
            .clone()
            .unwrap_or_else(|| ExperimentConfig::default().output_dir),
    };

    let (cfg, result) = match loaded {
        Ok(cfg) => {
            let r = execute(&args, &cfg);
            (Some(cfg), r)
        }
        Err(e) => (None, Err(e)),
    };

    let elapsed = start.elapsed().as_secs_f64();
    let (outcome, err) = match result {
        Ok(outcome) => {
            let err = outcome.failure.clone().map(CliError::Numerical);
            (outcome, err)
        }
        Err(e) => (Outcome::default(), Some(e)),
    };
    if args.command == Command::ShowConfig && err.is_none() {
        return ExitCode::SUCCESS;
    }
    let exit_code = err.as_ref().map_or(0, CliError::exit_code);
    let manifest = Manifest {
        subcommand: args.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.as_ref().map(|c| c.seed),
        status: err.as_ref().map_or("ok", CliError::status),
        exit_code,
        error: err.as_ref().map(|e| e.to_string()),
        wall_time_s: elapsed,
        threads: rayon::current_num_threads(),
        deterministic_order: args.deterministic_order,
        outputs: outcome
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        notes: outcome.notes.clone(),
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        overrides: &overrides,
        config: cfg.as_ref(),
    };
    if let Err(e) = write_manifest(&output_dir, &manifest) {
        eprintln!("warning: could not write manifest: {e}");
    }
    if let Some(e) = &err {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code)
}

fn execute(args: &Args, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let threads = if args.deterministic_order {
        1
    } else {
        args.threads.unwrap_or(cfg.threads)
    };
    init_pool(threads)?;
    if args.command == Command::ShowConfig {
        print!("{}", cfg.to_toml());
        return Ok(Outcome::default());
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Validation(format!(
            "cannot create output directory {}: {e}",
            cfg.output_dir.display()
        ))
    })?;
    commands::run(args.command, cfg)
}

fn init_pool(threads: usize) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))
}

fn write_manifest(dir: &Path, manifest: &Manifest<'_>) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stein_filter::harness::{
    run_experiment, write_outputs, ConfigError, ExperimentConfig, HarnessError, ModelConfig,
};

/// Nonlinear filtering experiments: Stein particle filters against an SIR
/// baseline, validated against exact posteriors, emitting plot-ready CSV.
#[derive(Parser)]
#[command(name = "stein-filter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config and write CSV outputs.
    Run {
        config: PathBuf,
        /// Full-scale preset: 500 particles, 100 descent iterations at base
        /// step 0.01, 50 runs.
        #[arg(long)]
        paper: bool,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the model with the named default ("linear-gaussian" or
        /// "benes").
        #[arg(long)]
        model: Option<String>,
        /// Override the number of Monte Carlo runs.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Check a config file: exit 0 when valid, 2 when not.
    Validate { config: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;

fn load_with_overrides(
    path: &PathBuf,
    paper: bool,
    seed: Option<u64>,
    out: Option<PathBuf>,
    model: Option<String>,
    runs: Option<usize>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(name) = model {
        config.model = ModelConfig::from_name(&name)?;
    }
    if let Some(seed) = seed {
        config.base_seed = seed;
    }
    if let Some(dir) = out {
        config.output.dir = dir;
    }
    if let Some(m) = runs {
        config.runs = m;
    }
    if paper {
        config.apply_paper_preset();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(_) => {
                println!("ok: {} is a valid experiment config", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid config: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run {
            config,
            paper,
            seed,
            out,
            model,
            runs,
        } => {
            let config = match load_with_overrides(&config, paper, seed, out, model, runs) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            eprintln!(
                "running {} experiment: {} steps of dt = {}, {} runs, backends [{}]",
                config.model.name(),
                config.steps(),
                config.model.dt(),
                config.runs,
                config.series_names().join(", "),
            );
            let results = match run_experiment(&config) {
                Ok(r) => r,
                Err(HarnessError::Config(e)) => {
                    eprintln!("invalid config: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
                Err(e) => {
                    eprintln!("experiment failed: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let written = match write_outputs(&results) {
                Ok(w) => w,
                Err(e) => {
                    eprintln!("writing outputs failed: {e}");
                    return ExitCode::FAILURE;
                }
            };

            println!("backend,metric,value,stderr");
            for row in results.summary.iter().chain(results.timings.iter()) {
                println!("{},{},{},{}", row.backend, row.metric, row.value, row.stderr);
            }
            eprintln!("wrote {} files under {}", written.len(), config.output.dir.display());

            if results.failed_runs > 0 {
                eprintln!(
                    "{} backend run(s) aborted; see failed_runs in summary.csv",
                    results.failed_runs
                );
                return ExitCode::from(EXIT_BACKEND);
            }
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    run(Cli::parse())
}

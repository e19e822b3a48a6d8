use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use svi_harness::{preset, run_experiment, seed_base_from_env, write_all, ExperimentSpec, RunOptions, PRESET_NAMES};

#[derive(Parser)]
#[command(name = "svi", version, about = "Run stochastic VI solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a JSON experiment file.
    Run {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to the experiment's `output` or `results/<experiment_id>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated seeds replacing the experiment's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        max_iterations: Option<u64>,
        #[arg(long)]
        max_oracle_calls: Option<u64>,
    },
    /// Print the preset names.
    ListPresets,
    /// Check a JSON experiment file and report every invalid field.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a preset as JSON.
    Show { preset: String },
}

fn load(path: &PathBuf) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentSpec::from_json(&text)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { preset: name, config, out, workers, seeds, max_iterations, max_oracle_calls } => {
            let mut spec = match (name, config) {
                (Some(n), None) => preset(&n)?,
                (None, Some(p)) => load(&p)?,
                _ => bail!("give exactly one of --preset, --config"),
            };
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            if max_iterations.is_some() {
                spec.budget.max_iterations = max_iterations;
            }
            if max_oracle_calls.is_some() {
                spec.budget.max_oracle_calls = max_oracle_calls;
            }
            let mut options = RunOptions { seed_base: seed_base_from_env()?, ..RunOptions::default() };
            if let Some(w) = workers {
                options.workers = w;
            }
            let dir = out
                .or_else(|| spec.output.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(&spec.experiment_id));
            let result = run_experiment(&spec, options)?;
            let files = write_all(&result, &dir)?;
            println!("{}", files.summary.display());
            println!("{}", files.trajectory.display());
        }
        Command::ListPresets => {
            for n in PRESET_NAMES {
                println!("{n}");
            }
        }
        Command::Validate { config } => {
            load(&config)?.validate()?;
            println!("ok");
        }
        Command::Show { preset: name } => {
            println!("{}", serde_json::to_string_pretty(&preset(&name)?)?);
        }
    }
    Ok(())
}

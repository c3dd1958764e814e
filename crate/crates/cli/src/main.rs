//! `icufed gen-data | run | summarize`

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use icufed::experiment::{gen_data, run_experiment, summarize, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "icufed", version, about = "ICU mortality prediction: CML, LML and FedAvg experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort as events.csv and outcomes.csv.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Target directory (default: the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the configured grid.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads for independent runs (0 = all cores).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep runs that already finished in the output directory.
        #[arg(long)]
        resume: bool,
        /// Print the resolved grid and exit without touching any file.
        #[arg(long)]
        dry_run: bool,
    },
    /// Mean ± std tables from a results directory.
    Summarize {
        /// Directory holding results.csv (default: the config's output_dir).
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = ExperimentConfig::default();
            c.resolve_paths(Path::new("."));
            c
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData { common, out } => {
            let config = load(&common)?;
            let dir = out.unwrap_or_else(|| config.output_dir.clone());
            let audit = gen_data(config.seed, &config.synthetic, &config.cohort, &dir)?;
            println!(
                "{} patients, {} ICU deaths, {} events -> {}",
                audit.n_patients,
                audit.deaths_in_icu,
                audit.events,
                dir.display()
            );
        }
        Command::Run {
            common,
            jobs,
            resume,
            dry_run,
        } => {
            let config = load(&common)?;
            let options = RunOptions { resume, jobs, dry_run };
            let summary = run_experiment(&config, &options).context("experiment failed")?;
            if !dry_run {
                println!(
                    "{} result rows ({} runs resumed) -> {}",
                    summary.rows.len(),
                    summary.skipped_units,
                    summary.output_dir.join("results.csv").display()
                );
            }
        }
        Command::Summarize { dir, common } => {
            let dir = match dir {
                Some(d) => d,
                None => load(&common)?.output_dir,
            };
            print!("{}", summarize(&dir)?);
        }
    }
    Ok(())
}

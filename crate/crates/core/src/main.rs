use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use beamtrain::config::{load_config, parse_config, ExperimentConfig};
use beamtrain::experiment::{run_experiment, sweep_dump, RESULTS_FILE};

/// Environment variable overriding the output directory (lower precedence
/// than --output).
const OUTPUT_ENV: &str = "BEAMTRAIN_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "beamtrain",
    version,
    about = "Two-stage multi-beam training simulator for THz hybrid-beamforming links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write results.csv, summary.csv and
    /// manifest.toml
    Run {
        /// Experiment config (TOML)
        config: PathBuf,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trial count
        #[arg(long)]
        trials: Option<u64>,
        /// Output directory (default: config `output`, or $BEAMTRAIN_OUTPUT_DIR)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config file and report every violation
    Validate {
        /// Experiment config (TOML)
        config: PathBuf,
    },
    /// Emit per-curve plot data files from an existing results.csv
    SweepDump {
        /// Experiment config (TOML)
        config: PathBuf,
        /// results.csv to read (default: <output dir>/results.csv)
        #[arg(long)]
        results: Option<PathBuf>,
        /// Directory for the curve files (default: the output dir)
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn output_dir(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| config.output.clone())
}

fn run() -> beamtrain::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            trials,
            output,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if let Some(trials) = trials {
                cfg.sweep.trials = trials;
            }
            cfg.validate()?;
            let out_dir = output_dir(&cfg, output);
            let artifacts = run_experiment(&cfg, &out_dir)?;
            println!(
                "wrote {} rows to {}",
                artifacts.records.len(),
                artifacts.results_path.display()
            );
            println!("summary:  {}", artifacts.summary_path.display());
            println!("manifest: {}", artifacts.manifest_path.display());
        }
        Command::Validate { config } => {
            load_config(&config)?;
            println!("config OK: {}", config.display());
        }
        Command::SweepDump {
            config,
            results,
            output,
        } => {
            let cfg = load_config(&config)?;
            let out_dir = output_dir(&cfg, output);
            let results_path = results.unwrap_or_else(|| out_dir.join(RESULTS_FILE));
            let files = sweep_dump(&cfg, &results_path, &out_dir)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

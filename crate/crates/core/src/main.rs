use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedcontrol::experiment::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedcontrol", version, about = "Federated aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured strategy and write results.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed, overriding `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Repetitions per strategy, overriding `repetitions`.
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Parse and validate a config file.
    Validate { config: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            println!(
                "{}: ok ({} strategies, {} repetitions, {} rounds)",
                config.display(),
                cfg.strategies.len(),
                cfg.repetitions,
                cfg.federation.rounds
            );
        }
        Command::Run {
            config,
            out,
            seed,
            repetitions,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if let Some(k) = repetitions {
                cfg.repetitions = k;
            }
            let report = run_experiment(&cfg)?;
            println!(
                "{:<28} {:>10} {:>10} {:>12}",
                "strategy", "final_acc", "ci95", "R_threshold"
            );
            for s in &report.strategies {
                let ci = s
                    .summary
                    .final_ci95_accuracy
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                let r = s
                    .summary
                    .r_threshold_mean
                    .map_or_else(|| "not reached".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:<28} {:>10.4} {:>10} {:>12}",
                    s.strategy, s.summary.final_mean_accuracy, ci, r
                );
            }
            println!("wrote {} files to {}", report.files.len(), cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

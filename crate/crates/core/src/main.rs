use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use swgsim::config::{ExperimentConfig, Scenario};
use swgsim::runner::{self, RunOptions};
use swgsim::Error;

/// Detector, GHZ coincidence and gate-chain simulations.
#[derive(Debug, Parser)]
#[command(name = "swgsim", version)]
struct Cli {
    /// ghz4, characterize, scaling or gatechain.
    scenario: Scenario,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV tables and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "SWGSIM_WORKERS")]
    workers: Option<usize>,
    /// Compare two detector sets in the ghz4 scenario, e.g. spcm:swg.
    #[arg(long)]
    compare: Option<String>,
    /// Print the summary as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => ExperimentConfig::from_toml(&text),
            Err(e) => Err(Error::Io(e)),
        },
        None => Ok(ExperimentConfig::default()),
    };
    let opts = RunOptions {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        workers: cli.workers,
        compare: cli.compare.clone(),
    };
    match cfg.and_then(|c| runner::run(&c, cli.scenario, &opts)) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            } else {
                println!("{} (seed {}, config {})", summary.scenario, summary.seed, &summary.config_hash[..12]);
                for (k, v) in &summary.metrics {
                    println!("  {k} = {v}");
                }
                for n in &summary.notes {
                    println!("  note: {n}");
                }
                if let Some(dir) = &opts.out_dir {
                    println!("wrote {} files to {}", summary.artifacts.len(), dir.display());
                }
                println!("elapsed {:.2} s on {} workers", summary.elapsed_s, summary.workers);
            }
            ExitCode::SUCCESS
        }
        Err(Error::Config(issues)) => {
            let report = serde_json::json!({ "error": "invalid configuration", "issues": issues });
            eprintln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

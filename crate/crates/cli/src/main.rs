use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetfl::commands::{cmd_partition_preview, cmd_report, cmd_run, cmd_train_supernet};
use hetfl::config::{parse_config, ExperimentConfig};
use hetfl::RayonExecutor;

/// Resource-aware heterogeneous federated learning simulator.
#[derive(Parser)]
#[command(name = "hetfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured output directory (must exist).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the weight-sharing supernet and write a checkpoint.
    TrainSupernet(Common),
    /// Run the federated experiment and write metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads for client training (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare metrics files; the first is the baseline.
    Report {
        #[arg(required = true, value_name = "METRICS")]
        metrics: Vec<PathBuf>,
        /// Accuracy threshold for rounds- and cost-to-target.
        #[arg(long)]
        target: Option<f64>,
        /// Also write report.csv and report.txt here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Print per-client label histograms of the partition.
    PartitionPreview(Common),
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainSupernet(common) => {
            let cfg = load(&common)?;
            let out = cmd_train_supernet(&cfg, common.out.as_deref())?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("summary:    {}", out.summary.display());
        }
        Command::Run { common, threads } => {
            let cfg = load(&common)?;
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let out = cmd_run(&cfg, common.out.as_deref(), &RayonExecutor)?;
            if let Some(last) = out.summary.reports.last() {
                println!(
                    "round {}: global acc {:.4}, mean local acc {:.4}, {} bytes",
                    last.round, last.global_accuracy, last.mean_local_accuracy, last.cumulative_bytes
                );
            }
            println!("metrics:     {}", out.metrics.display());
            println!("utilization: {}", out.utilization.display());
            println!("target:      {}", out.target.display());
        }
        Command::Report { metrics, target, out } => {
            let (_, text) = cmd_report(&metrics, target, out.as_deref())?;
            print!("{text}");
        }
        Command::PartitionPreview(common) => {
            let cfg = load(&common)?;
            print!("{}", cmd_partition_preview(&cfg)?);
        }
    }
    Ok(())
}

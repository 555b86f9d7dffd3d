use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use regent_cli::commands::{self, Experiment};
use regent_cli::{CliError, ExperimentConfig};

/// Retrieval-augmented agents: generate demos, pretrain, evaluate on unseen
/// levels and check the coverage bound.
#[derive(Debug, Parser)]
#[command(name = "regent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record expert demonstrations for pretraining and held-out levels.
    Gen,
    /// Build retrieval contexts for the pretraining demonstrations.
    Preprocess,
    /// Train the sequence model on every pretraining environment.
    Pretrain,
    /// Finetune the pretrained model on each held-out environment.
    Finetune,
    /// Roll out policies on held-out environments across the demo sweep.
    Eval,
    /// Check retrieve-and-play against the coverage bound.
    Bound,
    /// Aggregate evaluation rollouts per tier.
    Report,
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Validation("--threads must be positive".into()).into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    #[cfg(not(feature = "parallel"))]
    eprintln!("built without the `parallel` feature; --threads {n} ignored");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    set_threads(cli.threads)?;
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    let exp = Experiment::new(config);
    match cli.command {
        Command::Gen => {
            let files = commands::cmd_gen(&exp)?;
            println!("wrote {} demoset files under {}", files.len(), exp.layout.root.display());
        }
        Command::Preprocess => {
            let files = commands::cmd_preprocess(&exp)?;
            println!("wrote {} context sets", files.len());
        }
        Command::Pretrain => {
            let path = commands::cmd_pretrain(&exp)?;
            println!("wrote {}", path.display());
        }
        Command::Finetune => {
            let files = commands::cmd_finetune(&exp)?;
            println!("wrote {} finetuned checkpoints", files.len());
        }
        Command::Eval => {
            let (_, summary) = commands::cmd_eval(&exp)?;
            println!(
                "{:<12} {:<24} {:<17} {:>7} {:>8} {:>8}",
                "tier", "env", "policy", "demos", "mean", "std"
            );
            for r in summary {
                println!(
                    "{:<12} {:<24} {:<17} {:>7} {:>8.3} {:>8.3}",
                    r.tier, r.env_id, r.policy, r.n_demos, r.mean_normalized_return, r.std_normalized_return
                );
            }
        }
        Command::Bound => {
            let reports = commands::cmd_bound(&exp)?;
            println!("{:>6} {:>6} {:>8} {:>8} {:>8} {:>8}", "demos", "sticky", "d_iso", "bound", "gap", "se");
            for r in reports {
                println!(
                    "{:>6} {:>6.2} {:>8.4} {:>8.3} {:>8.4} {:>8.4}",
                    r.n_demos, r.sticky_p, r.d_isolated, r.bound, r.empirical_gap, r.gap_se
                );
            }
        }
        Command::Report => {
            let rows = commands::cmd_report(&exp)?;
            println!(
                "{:<12} {:<17} {:>7} {:>7} {:>8} {:>8}",
                "tier", "policy", "demos", "levels", "mean", "std"
            );
            for r in rows {
                println!(
                    "{:<12} {:<17} {:>7} {:>7} {:>8.3} {:>8.3}",
                    r.tier, r.policy, r.n_demos, r.levels, r.mean_normalized_return, r.std_normalized_return
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err.chain().any(|e| {
                matches!(e.downcast_ref::<CliError>(), Some(CliError::Validation(_)))
                    || matches!(
                        e.downcast_ref::<regent_core::Error>(),
                        Some(regent_core::Error::Config(_) | regent_core::Error::Validation { .. })
                    )
            });
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

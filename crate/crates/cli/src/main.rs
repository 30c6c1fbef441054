//! `leosim` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use leosim::commands::{cmd_compare, cmd_sweep_weights, cmd_train, cmd_validate, load_config, Overrides};
use leosim::simulator::RunPolicy;

#[derive(Parser)]
#[command(
    name = "leosim",
    version,
    about = "LEO ISL routing, bandwidth allocation and scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training episodes per snapshot.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            episodes: self.episodes,
            iterations: self.iterations,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the first snapshot and write the training trace.
    Train(Common),
    /// Train per snapshot and compare allocation/scheduling policies.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of dsroq, dsroq-fifo, baseline.
        #[arg(long, value_delimiter = ',', default_value = "dsroq,dsroq-fifo,baseline")]
        policies: Vec<RunPolicy>,
    },
    /// Train once, then evaluate scheduling under several EF weights.
    SweepWeights {
        #[command(flatten)]
        common: Common,
        /// Comma-separated EF weights used at evaluation time.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        ef_weights: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "dsroq")]
        policies: Vec<RunPolicy>,
    },
    /// Parse and validate a config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg =
                load_config(&c.config, &c.overrides()).with_context(|| format!("loading {}", c.config.display()))?;
            let out = cmd_train(&cfg)?;
            println!(
                "trained {} episodes, best reward {:.6}; wrote {}",
                out.trace.len(),
                out.best_reward,
                out.out_dir.display()
            );
        }
        Command::Compare { common, policies } => {
            let cfg = load_config(&common.config, &common.overrides())
                .with_context(|| format!("loading {}", common.config.display()))?;
            let out = cmd_compare(&cfg, &policies)?;
            for f in &out.summary.fairness {
                println!("{:<11} mean fairness {:.4}", f.policy.label(), f.fairness.mean);
            }
            println!("wrote {}", out.out_dir.display());
        }
        Command::SweepWeights {
            common,
            ef_weights,
            policies,
        } => {
            let cfg = load_config(&common.config, &common.overrides())
                .with_context(|| format!("loading {}", common.config.display()))?;
            let out = cmd_sweep_weights(&cfg, &ef_weights, &policies)?;
            for f in &out.summary.fairness {
                println!(
                    "{:<11} ef_weight {:>6} mean fairness {:.4}",
                    f.policy.label(),
                    f.ef_weight,
                    f.fairness.mean
                );
            }
            println!("wrote {}", out.out_dir.display());
        }
        Command::ValidateConfig { config } => {
            println!(
                "{}",
                cmd_validate(&config).with_context(|| format!("validating {}", config.display()))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

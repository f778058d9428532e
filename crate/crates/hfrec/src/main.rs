use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hfrec::commands;
use hfrec::config::ExperimentConfig;
use hfrec::error::CliResult;

#[derive(Parser)]
#[command(name = "hfrec", version, about = "High-frequency video restoration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic HR clips with ground-truth flow
    Synth(Common),
    /// Apply the two-order degradation to every clip
    Degrade(Common),
    /// Train the configured denoiser
    Train(Common),
    /// Evaluate the checkpoint and baselines on held-out clips
    Eval(Common),
    /// Train and evaluate the five ablation variants
    Ablate(Common),
    /// Sweep the high-frequency subband weight
    SweepWeights(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    let (c, f): (&Common, fn(&ExperimentConfig, &std::path::Path) -> CliResult<()>) = match &cli.command {
        Command::Synth(c) => (c, |cfg, out| commands::cmd_synth(cfg, out).map(drop)),
        Command::Degrade(c) => (c, commands::cmd_degrade),
        Command::Train(c) => (c, commands::cmd_train),
        Command::Eval(c) => (c, commands::cmd_eval),
        Command::Ablate(c) => (c, |cfg, out| commands::cmd_ablate(cfg, out).map(drop)),
        Command::SweepWeights(c) => (c, |cfg, out| commands::cmd_sweep_weights(cfg, out).map(drop)),
    };
    let cfg = ExperimentConfig::load(&c.config)?;
    f(&cfg, &c.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hfrec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

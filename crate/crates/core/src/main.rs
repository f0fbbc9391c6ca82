use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use tnml::harness::{self, CliArgs};

#[derive(Parser)]
#[command(
    name = "tnml",
    about = "Trace-norm regularized multitask learning: synthesis, training, bounds, and concentration checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trial count override.
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn into_args(self) -> CliArgs {
        CliArgs { config: self.config, seed: self.seed, out: self.out, trials: self.trials }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multitask dataset and its ground truth.
    Synth(Common),
    /// Fit the trace-ball solver on a dataset CSV.
    Train(Common),
    /// Evaluate the closed-form excess-risk bounds.
    Bounds(Common),
    /// Run the tail-bound and moment verification battery.
    Concentration(Common),
    /// Cross-product parameter sweep to CSV.
    Sweep(Common),
    /// Run trials end to end and write experiment records.
    Report(Common),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(c) => harness::cmd_synth(&c.into_args()),
        Command::Train(c) => harness::cmd_train(&c.into_args()),
        Command::Bounds(c) => harness::cmd_bounds(&c.into_args()),
        Command::Concentration(c) => harness::cmd_concentration(&c.into_args()),
        Command::Sweep(c) => harness::cmd_sweep(&c.into_args()),
        Command::Report(c) => harness::cmd_report(&c.into_args()),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use cfodds::{configure_threads, execute, Command, Invocation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cfodds",
    version,
    about = "Fair risk prediction under equalized counterfactual odds"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate the synthetic dataset or import a dataset file.
    Generate(Common),
    /// Split into train, validation and test.
    Split(Common),
    /// Train the causal-effect VAE.
    TrainVae(Common),
    /// Train the fair predictor grid and the baseline.
    TrainFair(Common),
    /// Score the selected models on validation and test.
    Evaluate(Common),
    /// Render metric tables and matrices.
    Report(Common),
    /// All stages in order.
    Run(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Generate(c) => (Command::Generate, c),
        Sub::Split(c) => (Command::Split, c),
        Sub::TrainVae(c) => (Command::TrainVae, c),
        Sub::TrainFair(c) => (Command::TrainFair, c),
        Sub::Evaluate(c) => (Command::Evaluate, c),
        Sub::Report(c) => (Command::Report, c),
        Sub::Run(c) => (Command::Run, c),
    };
    let invocation = Invocation {
        command,
        config: common.config,
        out: common.out,
        seed: common.seed,
    };
    let result = configure_threads().and_then(|_| execute(&invocation));
    match result {
        Ok(manifest) => {
            println!("wrote {} artifacts", manifest.artifacts.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

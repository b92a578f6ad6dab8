use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evadapt::config::ExperimentConfig;
use evadapt::{commands, Error};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1, checkpoint format 1)");

#[derive(Parser)]
#[command(name = "evadapt", version = VERSION, about = "Cross-domain event trigger identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.lambda=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Validate and split corpora, build vocabularies, write statistics.
    Prepare,
    /// Train one model (supervised, ada or feda).
    Train,
    /// Train the adversarial model over a lambda grid and pick the best.
    Sweep,
    /// Finetune a checkpoint on growing fractions of target labels.
    Finetune,
    /// Teacher/student self-training on the target domain.
    Selftrain,
    /// Score checkpoints in and out of domain.
    Eval,
    /// Write a synthetic corpus pair and matching word vectors.
    Synth,
}

fn exit_code(e: &Error) -> u8 {
    use evadapt_core::Error as Core;
    match e {
        Error::Config(_) | Error::Format { .. } => 1,
        Error::Core(Core::NonFinite { .. }) => 2,
        Error::Core(_) => 1,
        Error::Io { .. } => 2,
    }
}

fn run(cli: &Cli) -> Result<PathBuf, Error> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &cli.overrides)?,
        None => ExperimentConfig::from_toml("", &cli.overrides, &std::env::current_dir().unwrap_or_default())?,
    };
    match cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Finetune => commands::finetune(&cfg),
        Command::Selftrain => commands::selftrain(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

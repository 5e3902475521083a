use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use canmd::cli::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "canmd",
    version,
    about = "Label-shift corrected pseudo labeling and class-aware MMD adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set adapt.tau=0.8 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target scenario as JSONL files.
    Synth(ConfigArgs),
    /// Pretrain the classifier on the source domain.
    Pretrain(ConfigArgs),
    /// Run pseudo labeling and contrastive adaptation.
    Adapt(ConfigArgs),
    /// Score a checkpoint on a labeled JSONL file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// correction.json written by `adapt`.
        #[arg(long)]
        correction: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn config(args: &ConfigArgs) -> canmd::Result<RunConfig> {
    cli::load_config(args.config.as_deref(), &args.overrides)
}

fn run(cli: Cli) -> canmd::Result<()> {
    match cli.command {
        Command::Synth(a) => print_json(&cli::cmd_synth(&config(&a)?)?),
        Command::Pretrain(a) => print_json(&cli::cmd_pretrain(&config(&a)?)?),
        Command::Adapt(a) => print_json(&cli::cmd_adapt(&config(&a)?)?),
        Command::Evaluate {
            checkpoint,
            dataset,
            correction,
        } => print_json(&cli::cmd_evaluate(&checkpoint, &dataset, correction.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

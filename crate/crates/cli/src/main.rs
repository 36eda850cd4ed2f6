mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A failure reported as one `error: <class>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: &'static str, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep the report on one line whatever the message holds.
        let message = self.message.replace('\n', " ");
        write!(f, "error: {}: {}", self.class, message)
    }
}

impl From<robust_eeg::Error> for CliError {
    fn from(e: robust_eeg::Error) -> Self {
        Self::new(e.class(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "robust-eeg", version, about = "Adversarially robust EEG emotion recognition")]
struct Cli {
    /// Worker threads for folds and arms (0 uses every core). Overrides the
    /// `jobs` config key.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by the training commands.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set tsp.gamma=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset file; overrides the `dataset` key.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory; overrides the `out` key.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature dataset (or raw recordings with --raw).
    Synth(commands::SynthArgs),
    /// Turn raw recordings into a differential-entropy feature dataset.
    Preprocess(commands::PreprocessArgs),
    /// Train one model per leave-one-subject-out fold.
    Train(commands::TrainArgs),
    /// Score saved weights on clean and attacked data.
    Evaluate(commands::EvaluateArgs),
    /// Train with every weight-perturbation budget and report robustness.
    Sweep(commands::SweepArgs),
    /// Compare the training regimes under identical seeds.
    Ablation(commands::AblationArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(commands::GradcheckArgs),
    /// Print the fully resolved configuration, defaults included.
    Config(ConfigArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth(&args),
        Command::Preprocess(args) => commands::preprocess(&args),
        Command::Train(args) => commands::train(&args, cli.jobs),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Sweep(args) => commands::sweep(&args, cli.jobs),
        Command::Ablation(args) => commands::ablation(&args, cli.jobs),
        Command::Gradcheck(args) => commands::gradcheck(&args),
        Command::Config(args) => {
            print!("{}", commands::resolve(&args, cli.jobs)?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let message = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("{}", CliError::new("usage", message));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

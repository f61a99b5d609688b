//! `sharenet`: train, evaluate, tag, analyse and self-check multi-task
//! models from a TOML run config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sharenet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "sharenet", version, about = "Multi-task sharing networks: train, evaluate, analyse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed and write checkpoints, logs and predictions.
    Train {
        /// Config file, or a built-in preset such as `upos-fsn`.
        #[arg(short, long)]
        config: String,
        /// `section.field=value`, repeatable.
        #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (default: runs/<config name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a trained run directory (one `seed-N` directory).
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate raw, CoNLL-U or TSV input with a trained tagger or parser.
    Tag {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// `.tsv` writes token/semtag TSV; anything else writes CoNLL-U.
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare prediction dumps of several systems on one test set.
    Analyze {
        /// `system=path/to/predictions.jsonl`, one per system.
        #[arg(long = "dump", value_name = "SYSTEM=PATH", required = true)]
        dumps: Vec<String>,
        /// Systems from worst to best, comma-separated.
        #[arg(long, value_delimiter = ',')]
        ranking: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient, decoder and sharing self-checks.
    Verify {
        /// Corrupt a backward rule to confirm the checks catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
        /// Skip the slower whole-model gradient checks.
        #[arg(long)]
        skip_models: bool,
    },
    /// Print metrics and structure of finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    SigmoidGrad,
}

/// Failure with its exit code: usage and config problems exit 2,
/// everything else 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::MissingFile(_) | Error::Parse { .. } => CliError::Usage(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train { config, overrides, out } => commands::train(&config, &overrides, out),
        Command::Eval { run, split, out } => commands::eval(&run, split, out.as_deref()),
        Command::Tag { run, input, output } => commands::tag(&run, &input, &output),
        Command::Analyze { dumps, ranking, out } => commands::analyze(&dumps, ranking, &out),
        Command::Verify { inject_fault, skip_models } => commands::verify(inject_fault, skip_models),
        Command::Report { dirs } => commands::report(&dirs),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

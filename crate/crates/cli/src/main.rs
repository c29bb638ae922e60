mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qmotion::{Error, ErrorCategory};

use settings::Tunables;

#[derive(Debug, Parser)]
#[command(
    name = "qmotion",
    version,
    about = "Human motion prediction in a quotient pose space"
)]
struct Cli {
    #[command(flatten)]
    tunables: Tunables,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic motion sequences as MQS files.
    Synth(commands::SynthArgs),
    /// Encode MQS sequences into MQQ quotient tables.
    Transform(commands::TransformArgs),
    /// Write masked and noised copies of a sequence with mask sidecars.
    Perturb(commands::PerturbArgs),
    /// Train a model and write a checkpoint plus a CSV loss log.
    Train(commands::TrainArgs),
    /// Predict future frames for an observation.
    Predict(commands::PredictArgs),
    /// Report root-aligned MPJPE at fixed horizons.
    Eval(commands::EvalArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Transform(_) => "transform",
            Command::Perturb(_) => "perturb",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
        }
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fail(code: &str, subcommand: &str, message: &str, exit: u8) -> ExitCode {
    eprintln!(
        "error: code={code} subcommand={subcommand} message={}",
        one_line(message)
    );
    ExitCode::from(exit)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let sub = std::env::args()
                .skip(1)
                .find(|a| !a.starts_with('-'))
                .unwrap_or_else(|| "none".into());
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            return fail("E_USAGE", &sub, first, 2);
        }
    };
    let name = cli.command.name();
    match commands::run(cli.command, &cli.tunables) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), name, &e.to_string(), exit_code(&e)),
    }
}

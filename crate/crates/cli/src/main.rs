//! `rccm` command-line tool.
//!
//! Every invocation ends by printing `RESULT <json>` on stdout with the exit
//! code, the files written and a one-line summary.

mod commands;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rccm", version, about = "Joint plaque segmentation and echogenicity classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    GenerateData(commands::GenerateArgs),
    /// Train a model and write a run directory.
    Train(commands::TrainArgs),
    /// Score a trained run on one split of its dataset.
    Evaluate(commands::EvaluateArgs),
    /// Segment and classify a single PGM image.
    Predict(commands::PredictArgs),
    /// Train the four module combinations over several seeds.
    Ablate(commands::AblateArgs),
    /// Summarize an evaluation report, optionally drawing plots.
    Report(commands::ReportArgs),
}

#[derive(Debug, Serialize)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    rccm::alloc::retain_freed_memory();
    let outcome = match cli.command {
        Command::GenerateData(a) => commands::generate_data(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Report(a) => commands::report(a),
    };
    let result = match outcome {
        Ok((artifacts, summary)) => CommandResult {
            exit_code: 0,
            artifacts,
            summary,
        },
        Err(e) => {
            eprintln!("error: {e}");
            CommandResult {
                exit_code: 1,
                artifacts: Vec::new(),
                summary: e.to_string(),
            }
        }
    };
    println!("RESULT {}", serde_json::to_string(&result).expect("result serializes"));
    ExitCode::from(result.exit_code as u8)
}

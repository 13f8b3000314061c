//! `coxmt`: survival models from partially labeled cohorts.
//!
//! Exit codes: 0 success, 2 bad usage or configuration, 3 unreadable or
//! malformed data, 4 numeric failure while fitting or evaluating.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(
    name = "coxmt",
    version,
    about = "Semi-supervised Cox survival models: cohorts, training, evaluation"
)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Join an expression matrix with clinical follow-up into a dataset archive.
    Ingest(commands::IngestArgs),
    /// Generate a synthetic cohort with known coefficients.
    Synth(commands::SynthArgs),
    /// Fit one student/teacher model and save its checkpoints.
    Train(commands::TrainArgs),
    /// Repeated stratified cross-validation with per-fold grid search.
    Protocol(commands::ProtocolArgs),
    /// Run the protocol once per ablation arm and compare against the full setup.
    Ablate(commands::AblateArgs),
    /// Run the protocol at nested unlabeled pool sizes.
    Scaling(commands::ScalingArgs),
    /// Rank-sum comparison of two per-run report archives.
    Compare(commands::CompareArgs),
    /// Flatten the Kaplan-Meier curves of a report archive into one CSV.
    KmExport(commands::KmExportArgs),
}

fn run(cmd: Command) -> coxmt::Result<()> {
    match cmd {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Ablate(a) => commands::do_ablate(a),
        Command::Scaling(a) => commands::scaling(a),
        Command::Compare(a) => commands::compare(a),
        Command::KmExport(a) => commands::km_export(a),
    }
}

fn exit_code(e: &coxmt::Error) -> u8 {
    use coxmt::Error::*;
    match e {
        Config { .. } | OutOfOrder { .. } => 2,
        Io { .. }
        | CsvCell { .. }
        | Format { .. }
        | DuplicateId { .. }
        | MissingHousekeeping { .. }
        | Dataset { .. }
        | MissingPatches { .. }
        | Checkpoint { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Command-line front end: exact/error-injected GEMMs, trace
//! generation, error-model calibration and validation, design-space
//! sweeps, and the per-layer protection pipeline (profile, allocate,
//! infer, report).

mod commands;
mod common;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gavsim", version, about = "Bit-serial undervolting simulator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bit-serial GEMM from tensor containers.
    Gemm(commands::gemm::Args),
    /// Generate undervolting error traces from the timing surrogate.
    OracleTrace(commands::trace::Args),
    /// Fill the error-model tables from trace files.
    Calibrate(commands::model::CalibrateArgs),
    /// Compare the error model against timing-surrogate traces.
    ValidateModel(commands::model::ValidateArgs),
    /// Sweep precision x G and emit an error/power/efficiency CSV.
    Sweep(commands::sweep::Args),
    /// Measure per-layer sensitivity profiles of a network.
    Profile(commands::dnn::ProfileArgs),
    /// Solve the per-layer protection-level assignment.
    Allocate(commands::dnn::AllocateArgs),
    /// Run quantized inference over a dataset with a protection plan.
    Infer(commands::dnn::InferArgs),
    /// Merge inference results into an efficiency/accuracy table.
    Report(commands::report::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gemm(args) => commands::gemm::run(args),
        Command::OracleTrace(args) => commands::trace::run(args),
        Command::Calibrate(args) => commands::model::run_calibrate(args),
        Command::ValidateModel(args) => commands::model::run_validate(args),
        Command::Sweep(args) => commands::sweep::run(args),
        Command::Profile(args) => commands::dnn::run_profile(args),
        Command::Allocate(args) => commands::dnn::run_allocate(args),
        Command::Infer(args) => commands::dnn::run_infer(args),
        Command::Report(args) => commands::report::run(args),
    };
    if let Err(err) = result {
        let code = common::exit_code(&err);
        eprintln!("{}", common::error_record(&err, code));
        std::process::exit(code);
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use cgflow_cli::{load_config, run, run_calibration, sample_field, validate, CliResult};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgflow", version, about = "Coarse-graining experiments for random elliptic coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Calibrate the forward and Lipschitz constants of a homog config.
    Calibrate { config: PathBuf },
    /// Field utilities.
    Field {
        #[command(subcommand)]
        action: FieldAction,
    },
}

#[derive(Subcommand)]
enum FieldAction {
    /// Sample one field and write it as a CGF1 dump.
    Sample { config: PathBuf },
}

fn dispatch(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::Run { config } => {
            let m = run(&load_config(&config)?)?;
            Ok(format!("{} finished; {} output(s)", m.experiment, m.outputs.len()))
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            validate(&cfg)?;
            Ok(format!("{}: ok ({})", config.display(), cfg.experiment.name()))
        }
        Command::Calibrate { config } => {
            let cfg = load_config(&config)?;
            run_calibration(&cfg)?;
            Ok(format!("wrote {}", cfg.output.join("calibration.json").display()))
        }
        Command::Field { action: FieldAction::Sample { config } } => {
            let cfg = load_config(&config)?;
            sample_field(&cfg)?;
            Ok(format!("wrote {}", cfg.output.join("field.cgf").display()))
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cgflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nullctl_core::error::Error;

/// Spectral analysis, controllability tests and null-control synthesis for
/// degenerate parabolic systems.
#[derive(Debug, Parser)]
#[command(name = "nullctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Number of modes, overriding the subcommand's section.
    #[arg(long, global = true)]
    pub modes: Option<usize>,
    #[arg(long, global = true)]
    pub nx: Option<usize>,
    #[arg(long, global = true)]
    pub nt: Option<usize>,
    /// Relative rank threshold of the Kalman test.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Steer only the controllable part of a deficient system.
    #[arg(long, global = true)]
    pub project_out_deficient: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Eigenpairs of the degenerate operator, with the Bessel oracle when available.
    Spectrum,
    /// Per-mode Kalman rank scan and dichotomy classification.
    Kalman,
    /// Kernel witness of a deficient mode and its adjoint trajectory.
    Witness,
    /// Minimum-energy null control of the modal truncation, verified on the full grid.
    Synthesize,
    /// Forward simulation, uncontrolled or with the synthesized control.
    Simulate {
        /// Apply the synthesized null control.
        #[arg(long)]
        controlled: bool,
    },
    /// Observability constant of the truncation.
    Observe,
    /// Carleman parameters and empirical weighted-estimate ratios.
    Carleman,
    /// Check the configuration and write the resolved document.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Kalman => "kalman",
            Command::Witness => "witness",
            Command::Synthesize => "synthesize",
            Command::Simulate { .. } => "simulate",
            Command::Observe => "observe",
            Command::Carleman => "carleman",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

const EXIT_INVALID: u8 = 2;
const EXIT_MATHEMATICAL: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_USAGE: u8 = 64;

fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Core(e) if e.is_invalid_spec() => EXIT_INVALID,
        Failure::Core(e) if e.is_mathematical() => EXIT_MATHEMATICAL,
        Failure::Core(_) | Failure::Io(_) => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Core(e) => eprintln!("nullctl {}: {e}", cli.command.name()),
                Failure::Io(e) => eprintln!("nullctl {}: i/o error: {e}", cli.command.name()),
            }
            ExitCode::from(exit_code(&failure))
        }
    }
}

mod commands;
mod report;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use report::{CliError, EXIT_CONFIG};

/// Numerical experiments on torus diffeomorphisms with a dominated splitting.
///
/// Exit codes: 0 ok, 1 numerical failure, 2 configuration error, 3 budget
/// exceeded, 4 inconclusive certification, 5 verification scenario failed.
/// DOMLAB_THREADS sets the worker count.
#[derive(Debug, Parser)]
#[command(name = "domlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Iterate an orbit.
    Simulate(commands::SimulateArgs),
    /// Evaluate the derivative at a point.
    Jacobian(commands::JacobianArgs),
    /// Lyapunov exponents along an orbit.
    Lyapunov(commands::LyapunovArgs),
    /// Estimate bundles on a grid and certify domination.
    Splitting(commands::SplittingArgs),
    /// Topological entropy from separated-set counts.
    Entropy(commands::EntropyArgs),
    /// Returns of a box set, or the non-recurrence diagnostic.
    Recurrence(commands::RecurrenceArgs),
    /// Empirical measures and SRB-like candidates.
    Srb(commands::SrbArgs),
    /// Run a named verification scenario.
    Verify(commands::VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    Catmap,
    Gp,
    MorseSmale,
    /// Morse-Smale circle map times the cat map (or --matrix).
    Product,
    /// Linear toral automorphism given by --matrix.
    Linear,
}

/// Where the system comes from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SystemArgs {
    #[arg(long, value_enum, required_unless_present = "system", conflicts_with = "system")]
    pub builtin: Option<Builtin>,
    /// System definition file.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Gourmelon-Potrie drift parameter.
    #[arg(long, default_value_t = 0.5)]
    pub a: f64,
    /// Gourmelon-Potrie modulation parameter.
    #[arg(long, default_value_t = 0.25)]
    pub b: f64,
    /// Morse-Smale strength, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub kappa: f64,
    /// Integer matrix, rows separated by `;`, e.g. "2,1;1,1".
    #[arg(long)]
    pub matrix: Option<String>,
    /// RK4 steps per unit time for flows.
    #[arg(long)]
    pub rk4_steps: Option<usize>,
}

/// Output locations and the seed. Paths are left out of the report so that
/// runs writing to different files produce identical JSON.
#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// CSV table path.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DOMLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("DOMLAB_THREADS must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(CliError::Config("DOMLAB_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Jacobian(a) => commands::jacobian(&a),
        Command::Lyapunov(a) => commands::lyapunov(&a),
        Command::Splitting(a) => commands::splitting(&a),
        Command::Entropy(a) => commands::entropy(&a),
        Command::Recurrence(a) => commands::recurrence(&a),
        Command::Srb(a) => commands::srb(&a),
        Command::Verify(a) => commands::verify(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let json = serde_json::json!({
                "error": { "kind": "usage", "exit_code": EXIT_CONFIG, "message": e.kind().to_string() }
            });
            eprintln!("{json}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

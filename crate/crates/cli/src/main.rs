mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpc_core::QpcError;

/// Multi-plane Gaussian-slit simulator and period finder.
#[derive(Debug, Parser)]
#[command(name = "qpc", version, about)]
struct Cli {
    /// Working precision in decimal digits, overriding the configuration.
    #[arg(long, global = true, env = "QPC_PRECISION_DIGITS")]
    digits: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a configuration and report every violated constraint.
    Validate(ValidateArgs),
    /// Compute detector samples and write them as CSV.
    Simulate(SimulateArgs),
    /// Run the ratio scan and candidate extraction on an intensity CSV.
    Analyze(AnalyzeArgs),
    /// Diophantine approximation error curves for the lattice points.
    Sda(SdaArgs),
    /// Cramer-Rao bound against sample count over a set of noise levels.
    Crb(CrbArgs),
    /// Compare closed-form path amplitudes with brute-force quadrature.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub k_min: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    pub k_max: Option<i64>,
    /// Maximum number of extra visits per plane.
    #[arg(long)]
    pub exotic: Option<u32>,
    /// Add receiver noise at this signal-to-noise ratio.
    #[arg(long, allow_hyphen_values = true)]
    pub noise_snr: Option<f64>,
    /// Add receiver noise as described by the configuration's [noise] table.
    #[arg(long, conflicts_with = "noise_snr")]
    pub noise: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub intensity: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub m_max: u32,
    /// Hypothesized period; enables the lattice, theorem and bound checks.
    #[arg(long)]
    pub k_tilde: Option<u32>,
    /// Configuration that produced the samples, for lattice points.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = qpc_core::analysis::DEFAULT_PROMINENCE)]
    pub prominence: f64,
    #[arg(long, default_value_t = qpc_core::analysis::DEFAULT_REFINE_WINDOW)]
    pub refine_window: f64,
    #[arg(long, default_value_t = qpc_core::analysis::DEFAULT_LATTICE_TOL)]
    pub lattice_tol: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SdaArgs {
    #[arg(long, required_unless_present = "b_file", conflicts_with = "b_file")]
    pub config: Option<PathBuf>,
    /// One lattice point per line.
    #[arg(long)]
    pub b_file: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub k_pre: u32,
    /// Bound on the mean error below which a solution is declared.
    #[arg(long)]
    pub epsilon_bound: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrbArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub k_tilde: u32,
    /// Largest number of samples, taken from k = 0 upwards.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-5.0, 0.0, 5.0, 10.0, 15.0])]
    pub snr: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_derivative: f64,
    #[arg(long, default_value_t = qpc_core::analysis::DEFAULT_LATTICE_TOL)]
    pub lattice_tol: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// 1 for domain violations, 2 for I/O and parse failures, 3 for resource caps.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<QpcError>() {
            return match e {
                QpcError::Invariant(_) | QpcError::Singular(_) | QpcError::Range(_) => 1,
                QpcError::Parse(_) | QpcError::Io(_) => 2,
                QpcError::Resource(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let digits = cli.digits;
    let result = match cli.command {
        Command::Validate(a) => commands::validate(&a, digits),
        Command::Simulate(a) => commands::simulate(&a, digits),
        Command::Analyze(a) => commands::analyze(&a, digits),
        Command::Sda(a) => commands::sda(&a, digits),
        Command::Crb(a) => commands::crb(&a, digits),
        Command::OracleCheck(a) => commands::oracle_check(&a, digits),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

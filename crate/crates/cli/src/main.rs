//! Command-line front end: experiments over the truncated vector-valued
//! weighted Bergman space. Subcommands verify layer invariants, run the
//! boundary-decay equivalence suite, profile single functionals, table
//! the model integrals, and dump assembled operators.
//!
//! Exit codes: 0 success, 1 invariant violated, 2 configuration error,
//! 3 numerical instability (outputs produced so far are retained).

mod battery;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use bergman_core::error::CoreError;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

/// A command failed; the variant picks the exit code.
#[derive(Debug)]
pub enum Failure {
    /// A verified inequality or identity was violated (exit 1).
    Invariant(String),
    /// The configuration or request is unusable (exit 2).
    Config(String),
    /// The numerics could not certify themselves (exit 3).
    Instability(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Invariant(_) => 1,
            Failure::Config(_) => 2,
            Failure::Instability(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invariant(m) | Failure::Config(m) | Failure::Instability(m) => m,
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match &e {
            // The numerics ran but could not certify the result.
            CoreError::QuadratureInstability { .. }
            | CoreError::GammaDeviation { .. }
            | CoreError::GramDeviation { .. }
            | CoreError::TailBound { .. }
            | CoreError::NonFinite(_) => Failure::Instability(e.to_string()),
            // Everything else is a bad request.
            _ => Failure::Config(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "bergman",
    about = "Desk-scale experiments on truncated vector-valued weighted Bergman spaces",
    version
)]
struct Cli {
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV/JSON files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override: complex ball dimension.
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Override: weight exponent.
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,

    /// Override: matrix dimension.
    #[arg(long, global = true)]
    d: Option<usize>,

    /// Override: single truncation degree (replaces the config list).
    #[arg(long, global = true)]
    degree: Option<usize>,

    /// Override: base quadrature resolution.
    #[arg(long, global = true)]
    resolution: Option<usize>,

    /// Override: seed for random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the named invariant battery across all layers.
    VerifyLemmas,
    /// Compare the four boundary-decay conditions across degrees.
    Equivalence,
    /// Profile one boundary functional along rays.
    Profile,
    /// Table the model integrals; optionally run the Schur bound check.
    Special,
    /// Assemble the configured operator and write its matrix.
    Assemble,
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(alpha) = cli.alpha {
        cfg.alpha = alpha;
    }
    if let Some(d) = cli.d {
        cfg.d = d;
    }
    if let Some(degree) = cli.degree {
        cfg.degrees = vec![degree];
    }
    if let Some(resolution) = cli.resolution {
        cfg.resolution = resolution;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        // Compute layers parallelize internally; file writes stay on this
        // thread. A failed build here means a pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let cfg = effective_config(cli)?;
    match cli.command {
        Command::VerifyLemmas => commands::cmd_verify(&cfg, &cli.out),
        Command::Equivalence => commands::cmd_equivalence(&cfg, &cli.out),
        Command::Profile => commands::cmd_profile(&cfg, &cli.out),
        Command::Special => commands::cmd_special(&cfg, &cli.out),
        Command::Assemble => commands::cmd_assemble(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{FileConfig, ModelArgs, OutputArgs, ProtocolArgs};

/// Certified constant-gain bounds, error bounds and Monte Carlo checks for LMS.
#[derive(Debug, Parser)]
#[command(name = "lmsgain", version)]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    output: OutputArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Largest constant gain admitted by each criterion.
    Supgain,
    /// Asymptotic error bounds at the protocol gain (or --gain).
    Errorbound,
    /// Monte Carlo LMS runs with terminal-error classification.
    Simulate,
    /// Write the gain and error-bound tables for the benchmark models.
    Report {
        /// Skip the Monte Carlo columns.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Parse a data file and summarize the design it produces.
    IngestCheck {
        /// Also write the parsed table as canonical CSV.
        #[arg(long)]
        canonical: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input; exit code 2.
    Config(String),
    /// A numerical routine failed to converge; exit code 3.
    NonConvergence(String),
    /// Anything else; exit code 1.
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::NonConvergence(m) | CliError::Failed(m) => m,
        }
    }
}

impl From<lmsgain::Error> for CliError {
    fn from(e: lmsgain::Error) -> Self {
        use lmsgain::Error as E;
        match e {
            E::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            E::Config(_)
            | E::Parse { .. }
            | E::RaggedRow { .. }
            | E::ColumnOutOfRange { .. }
            | E::DimMismatch { .. }
            | E::InvalidCovariance { .. }
            | E::InvalidMatrix(_)
            | E::EmptyData
            | E::UnsupportedOperator(_)
            | E::InvalidRate(_)
            | E::Io(_) => CliError::Config(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (model, protocol, output) = config::merge(cli.model, cli.protocol, cli.output, &file);
    let ctx = commands::Context::new(model, protocol, output)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Supgain => commands::supgain(&ctx, &mut out),
        Command::Errorbound => commands::errorbound(&ctx, &mut out),
        Command::Simulate => commands::simulate(&ctx, &mut out),
        Command::Report { no_simulate } => commands::report(&ctx, !no_simulate, &mut out),
        Command::IngestCheck { canonical } => commands::ingest_check(&ctx, canonical.as_deref(), &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

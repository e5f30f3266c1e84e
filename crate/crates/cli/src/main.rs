use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weyl_persistence_cli::config::{Command, ExperimentConfig, Format, KernelChoice, SideChoice};
use weyl_persistence_cli::record::write_atomic;
use weyl_persistence_cli::{commands, CliError};

#[derive(Parser)]
#[command(name = "weyl-persist", version, about = "Persistence experiments for random Weyl polynomials")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the persistence exponent of a stationary kernel over horizons T.
    EstimateB(Flags),
    /// Fit log-persistence of Weyl polynomials against sqrt(n).
    WeylExponent(Flags),
    /// Run the numerical checks of the analytic inequalities.
    VerifyBounds(Flags),
    /// Split the half line into three intervals and estimate each.
    Decompose(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML file with the same keys as these flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kernel: Option<KernelChoice>,
    /// Degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    /// Horizons, comma separated.
    #[arg(long = "T", value_delimiter = ',')]
    t: Option<Vec<f64>>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output file; results go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long, value_enum)]
    side: Option<SideChoice>,
    /// Also fit at half the step and report the slope difference.
    #[arg(long)]
    refine: bool,
}

impl Flags {
    fn into_config(self) -> Result<ExperimentConfig, CliError> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            kernel: self.kernel,
            n: self.n,
            t: self.t,
            step: self.step,
            trials: self.trials,
            seed: self.seed,
            workers: self.workers,
            out: self.out,
            format: self.format,
            side: self.side,
            refine: self.refine.then_some(true),
            ..ExperimentConfig::default()
        };
        Ok(base.overridden_by(flags))
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (command, flags) = match cli.command {
        Cmd::EstimateB(f) => (Command::EstimateB, f),
        Cmd::WeylExponent(f) => (Command::WeylExponent, f),
        Cmd::VerifyBounds(f) => (Command::VerifyBounds, f),
        Cmd::Decompose(f) => (Command::Decompose, f),
    };
    let config = flags.into_config()?;
    let (record, failure) = commands::run(command, &config)?;
    eprint!("{}", commands::summary(&record));
    let rendered = record.render(record.header.config.format.unwrap_or_default())?;
    match &record.header.config.out {
        Some(path) => write_atomic(path, &rendered)?,
        None => print!("{rendered}"),
    }
    failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

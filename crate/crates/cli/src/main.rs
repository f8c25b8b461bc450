use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pseudocool_cli::commands::{self, ModelKind};
use pseudocool_cli::output::OutDir;
use pseudocool_cli::{CliError, RunConfig};

/// Pseudomode cooling simulations of a transverse-field Ising chain.
#[derive(Parser)]
#[command(name = "pseudocool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; every section falls back to its default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for scans and sweeps.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Matsubara correlation and write the ancilla spectra.
    FitBath(Common),
    /// Run one cooling trajectory.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "full")]
        model: ModelKind,
    },
    /// Final and time-resolved fidelity over a grid of bath resonances.
    Scan(Common),
    /// Real-coupling sweep, polynomial fit and continuation to `λ̄ = i`.
    Extrapolate(Common),
}

fn setup(common: &Common) -> Result<(RunConfig, OutDir), CliError> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.directory.clone());
    let out = OutDir::create(&dir)?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::FitBath(common) => {
            let (cfg, out) = setup(&common)?;
            Ok(render(&commands::fit_bath(&cfg, &out)?))
        }
        Command::Evolve { common, model } => {
            let (cfg, out) = setup(&common)?;
            Ok(render(&commands::evolve(&cfg, model, &out)?))
        }
        Command::Scan(common) => {
            let (cfg, out) = setup(&common)?;
            Ok(render(&commands::scan(&cfg, &out)?))
        }
        Command::Extrapolate(common) => {
            let (cfg, out) = setup(&common)?;
            Ok(render(&commands::extrapolate(&cfg, &out)?.continuation))
        }
    }
}

fn render<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_default()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

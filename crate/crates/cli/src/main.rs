//! `cyrisk`: tail-index, dependence and indifference-pricing pipeline for
//! cyber loss panels.

mod args;
mod commands;
mod error;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use args::*;
use error::CliError;
use settings::{resolve_out_dir, ConfigFile};

#[derive(Debug, Parser)]
#[command(
    name = "cyrisk",
    version,
    about = "Heavy-tailed cyber loss analysis and pricing"
)]
struct Cli {
    /// TOML config with one section per subcommand plus [common]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (defaults to $CYRISK_OUT_DIR, then the working directory)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a loss file; write cleaned events and quarterly aggregates
    Ingest(IngestArgs),
    /// Per-sector descriptive statistics
    Summary(SummaryArgs),
    /// Tail-index estimates per sector
    Tailfit(TailfitArgs),
    /// Trimmed Hill estimates (and optionally premiums) over a (k0, k) grid
    TrimSweep(TrimSweepArgs),
    /// Extremogram matrices of quarterly series
    Extremogram(ExtremogramArgs),
    /// Classical and robust correlation matrices
    Corr(CorrArgs),
    /// Pair-copula structure selection
    Copula(CopulaArgs),
    /// Indifference premium of a line or the portfolio
    Price(PriceArgs),
    /// Diversification ratio of the portfolio
    Diversify(DiversifyArgs),
    /// Generate a synthetic loss panel
    Synth(SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Summary(_) => "summary",
            Command::Tailfit(_) => "tailfit",
            Command::TrimSweep(_) => "trim-sweep",
            Command::Extremogram(_) => "extremogram",
            Command::Corr(_) => "corr",
            Command::Copula(_) => "copula",
            Command::Price(_) => "price",
            Command::Diversify(_) => "diversify",
            Command::Synth(_) => "synth",
        }
    }
}

fn run_with<T, F>(
    config: &ConfigFile,
    name: &str,
    flags: &T,
    out: &Path,
    f: F,
) -> Result<Value, CliError>
where
    T: Serialize + DeserializeOwned + Default,
    F: FnOnce(&T, &Path) -> Result<Value, CliError>,
{
    let merged = config.merge(name, flags)?;
    f(&merged, out)
}

fn dispatch(cli: Cli) -> Result<Value, CliError> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    let out = resolve_out_dir(cli.out_dir, &config)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Ingest(a) => run_with(&config, name, a, &out, commands::ingest),
        Command::Summary(a) => run_with(&config, name, a, &out, commands::summary),
        Command::Tailfit(a) => run_with(&config, name, a, &out, commands::tailfit),
        Command::TrimSweep(a) => run_with(&config, name, a, &out, commands::trim_sweep),
        Command::Extremogram(a) => run_with(&config, name, a, &out, commands::extremogram),
        Command::Corr(a) => run_with(&config, name, a, &out, commands::corr),
        Command::Copula(a) => run_with(&config, name, a, &out, commands::copula),
        Command::Price(a) => run_with(&config, name, a, &out, commands::price),
        Command::Diversify(a) => run_with(&config, name, a, &out, commands::diversify),
        Command::Synth(a) => run_with(&config, name, a, &out, commands::synth),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            // clap's rendering already carries the usage line.
            let _ = e.print();
            println!(
                "{}",
                json!({"status": "error", "kind": "validation", "message": e.kind().to_string()})
            );
            return ExitCode::from(1);
        }
    };
    let name = cli.command.name();
    match dispatch(cli) {
        Ok(mut summary) => {
            if let Value::Object(m) = &mut summary {
                m.insert("command".into(), json!(name));
                m.insert("status".into(), json!("ok"));
            }
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!(
                "{}",
                json!({"command": name, "status": "error", "kind": e.kind(), "message": e.to_string()})
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

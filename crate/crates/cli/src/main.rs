use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use aircell_cli::{
    compare_command, comparison_csv, dump_program, fit_command, parse_seeds, plan_csv, plan_report, run_command,
    CliError, Format, RunManifest,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aircell", version, about = "Wireless cell caching and broadcast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for one or more seeds.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Seed list such as `1,2,5-8`; defaults to the scenario's seed.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Output format; repeat for several.
        #[arg(long, value_enum)]
        format: Vec<Format>,
    },
    /// Compare two run output directories (b minus a).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the initial broadcast program as a slot table.
    DumpProgram {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Fit per-resource consumption models from a JSON sample log.
    Fit {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report the published/on-demand partition for a scenario.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            }),
            _ => Ok(()),
        },
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            seeds,
            out,
            format,
        } => {
            let seeds = seeds.as_deref().map(parse_seeds).transpose()?.unwrap_or_default();
            let report = run_command(&RunManifest {
                scenario,
                seeds,
                out: out.clone(),
                formats: format,
            })?;
            eprintln!(
                "{} seed(s), {} file(s) written to {}",
                report.summary.seeds.len(),
                report.files.len() + 2,
                out.display()
            );
            Ok(())
        }
        Command::Compare { a, b, format, out } => {
            let c = compare_command(&a, &b)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&c).expect("comparison serializes"),
                Format::Csv => comparison_csv(&c),
            };
            emit(&text, out.as_ref())
        }
        Command::DumpProgram { scenario, format } => emit(&dump_program(&scenario, format)?, None),
        Command::Fit { samples, out } => {
            let models = fit_command(&samples)?;
            emit(&serde_json::to_string_pretty(&models).expect("models serialize"), out.as_ref())
        }
        Command::Plan { scenario, format } => {
            let report = plan_report(&scenario)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
                Format::Csv => plan_csv(&report),
            };
            emit(&text, None)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

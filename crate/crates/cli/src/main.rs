use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exang_cli::commands::{self, Format};
use exang_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "exang", version, about = "Spatial model of block maxima and their directions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a station dataset from the `simulation` section.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generating parameters (default: next to the data file).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also write held-out sites as a prediction grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Run the sampler and write a trace with its manifest.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior predictive summaries at the sites of a grid file.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// CSV with columns station_id,lon,lat,alt.
        #[arg(long)]
        sites: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// WAIC of a fitted trace as JSON.
    Waic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior median and 95% interval of every trace column.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean squared errors over the `study` grid.
    Mse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, out, truth, grid } => commands::simulate(&RunConfig::load(&config)?, out, truth, grid),
        Command::Fit { config, data, out } => commands::fit(&RunConfig::load(&config)?, &data, out),
        Command::Predict { config, data, trace, sites, out, format } => {
            commands::predict(&RunConfig::load(&config)?, &data, &trace, &sites, out, format)
        }
        Command::Waic { config, data, trace, out } => commands::waic_cmd(&RunConfig::load(&config)?, &data, &trace, out),
        Command::Summarize { trace, out } => commands::summarize_cmd(&trace, out),
        Command::Mse { config, out } => commands::mse(&RunConfig::load(&config)?, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

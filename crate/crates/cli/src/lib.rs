//! Command-line front end for `apdlab`: sweeps, fits, TMD tables and
//! correction tables, written as CSV or JSON.
//!
//! Exit codes: 0 on success (a non-converged fit is still a success),
//! 2 for usage, configuration or input errors, 3 when a simulation would
//! exceed its capacity bounds.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::{Columns, FitModel, LinearReference};
use crate::config::{ExperimentConfig, Format};
use crate::error::{CliError, CliResult};
use crate::table::Table;

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "APDLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "apdlab",
    version,
    about = "Single-photon detector count-rate and click-statistics toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulation shards; results do not depend on it.
    #[arg(long)]
    pub shards: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct ColumnArgs {
    #[arg(long, default_value = "x")]
    pub x_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Defaults to `y_err` when that column exists.
    #[arg(long)]
    pub y_err_col: Option<String>,
    /// Defaults to `n_samples` when that column exists.
    #[arg(long)]
    pub n_samples_col: Option<String>,
}

impl From<&ColumnArgs> for Columns {
    fn from(a: &ColumnArgs) -> Self {
        Columns {
            x: a.x_col.clone(),
            y: a.y_col.clone(),
            y_err: a.y_err_col.clone(),
            n_samples: a.n_samples_col.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured sweep through the dead-time simulator.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fit a rate or mean-click model to sweep data.
    Fit {
        /// CSV with a header row.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "saturation")]
        model: FitModel,
        #[arg(long)]
        f_rep: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        columns: ColumnArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Raw and deconvolved click statistics of a time-multiplexed detector.
    Tmd {
        #[command(flatten)]
        config: ConfigArgs,
        /// Measured click histograms (columns transmission, m0..mN).
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Correction factors from sweep data or a simulated sweep.
    CorrectionTable {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, conflicts_with = "config")]
        data: Option<PathBuf>,
        /// Fit the linear reference to records with x up to this value.
        #[arg(long)]
        linear_max_x: Option<f64>,
        /// Choose the linear window from a saturation fit at this rate.
        #[arg(long)]
        f_rep: Option<f64>,
        #[command(flatten)]
        columns: ColumnArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Sizes the global thread pool from `APDLAB_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))
}

fn load_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    Ok(config)
}

fn emit(table: &Table, output: &OutputArgs, config: Option<&ExperimentConfig>) -> CliResult<()> {
    let format = output
        .format
        .or(config.and_then(|c| c.output.format))
        .unwrap_or(Format::Csv);
    let path = output
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.output.path.clone()));
    write_to(path.as_deref(), |w| table.write(w, format))
}

fn write_to(
    path: Option<&Path>,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> CliResult<()> {
    match path {
        Some(p) => {
            let name = p.display().to_string();
            let file = File::create(p).map_err(|e| CliError::io(&name, e))?;
            let mut w = BufWriter::new(file);
            body(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(&name, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock).map_err(|e| CliError::io("stdout", e))
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, output } => {
            let cfg = load_config(&config)?;
            let table = commands::simulate(&cfg, config.shards)?;
            emit(&table, &output, Some(&cfg))
        }
        Command::Fit {
            data,
            model,
            f_rep,
            bins,
            columns,
            output,
        } => {
            let records = commands::read_records(&data, &(&columns).into())?;
            let report = commands::fit(&records, model, f_rep, bins)?;
            for fit in report.fits() {
                if !fit.converged {
                    log::warn!(
                        "{} fit did not converge after {} iterations",
                        fit.model,
                        fit.iterations
                    );
                }
            }
            match output.format.unwrap_or(Format::Json) {
                Format::Json => write_to(output.out.as_deref(), |w| {
                    serde_json::to_writer_pretty(&mut *w, &report)?;
                    writeln!(w)
                }),
                Format::Csv => write_to(output.out.as_deref(), |w| report.to_table().write_csv(w)),
            }
        }
        Command::Tmd {
            config,
            data,
            output,
        } => {
            let cfg = load_config(&config)?;
            let table = commands::tmd(&cfg, data.as_deref())?;
            emit(&table, &output, Some(&cfg))
        }
        Command::CorrectionTable {
            config,
            data,
            linear_max_x,
            f_rep,
            columns,
            output,
        } => {
            if let Some(path) = data {
                let records = commands::read_records(&path, &(&columns).into())?;
                let reference = match (linear_max_x, f_rep) {
                    (Some(m), _) => LinearReference::MaxX(m),
                    (None, Some(f)) => LinearReference::Saturation { f_rep: f },
                    (None, None) => {
                        return Err(CliError::Config(
                            "give --linear-max-x or --f-rep for the linear reference".into(),
                        ))
                    }
                };
                let (table, _) = commands::correction_from_records(&records, reference)?;
                emit(&table, &output, None)
            } else {
                let cfg = load_config(&config)?;
                let (table, _) =
                    commands::correction_from_config(&cfg, config.shards, linear_max_x)?;
                emit(&table, &output, Some(&cfg))
            }
        }
    }
}

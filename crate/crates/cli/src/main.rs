//! `stforecast`: command-line driver for the space-time forecasting pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stforecast::{DataMode, Error};

use crate::commands::Ctx;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "stforecast", version, about = "Space-time log-risk forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; required by synth, bayes, compare and bootstrap.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Panel to use; compare runs both when omitted and both panels exist.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hard,
    Soft,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Daily counts to hard and soft log-risk panels.
    Ingest,
    /// Trigonometric regression with harmonic-count selection.
    Fit,
    /// Classical autocorrelation estimate and residual predictions.
    Residual,
    /// Posterior-mode autocorrelation estimate.
    Bayes,
    /// Combined regression and residual forecast.
    Forecast,
    /// Cross-validated SMAPE comparison of the baselines and the pipeline.
    Compare,
    /// Bootstrap intervals and densities.
    Bootstrap,
    /// Synthetic panel and counts from a scenario.
    Synth,
    /// Plain-text summary of comparison and bootstrap outputs.
    Report,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        4
    } else if e.is_numerical() {
        3
    } else {
        2
    }
}

fn run(cli: &Cli) -> stforecast::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "config not found")));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            Mode::Hard => DataMode::Hard,
            Mode::Soft => DataMode::Soft,
        };
    }
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidInput("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?;
    let ctx = Ctx {
        cfg,
        mode_explicit: cli.mode.is_some(),
    };
    pool.install(|| match cli.command {
        Command::Ingest => commands::ingest_cmd(&ctx),
        Command::Fit => commands::fit_cmd(&ctx),
        Command::Residual => commands::residual_cmd(&ctx),
        Command::Bayes => commands::bayes_cmd(&ctx),
        Command::Forecast => commands::forecast_cmd(&ctx),
        Command::Compare => commands::compare_cmd(&ctx),
        Command::Bootstrap => commands::bootstrap_cmd(&ctx),
        Command::Synth => commands::synth_cmd(&ctx),
        Command::Report => commands::report_cmd(&ctx),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pilotlab::harness::{
    emit_histogram, run_experiment, summarize, write_csv, Algorithm, ExperimentConfig,
    HistogramSpec,
};
use pilotlab::{Error, Result};

/// Downlink pilot design sweeps over randomly drawn single-cell scenarios.
///
/// Flags override the values read from `--config`.
#[derive(Debug, Parser)]
#[command(name = "pilotlab", version)]
struct Cli {
    /// key = value file with scenario and experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// alg1, alg2, appendix or all (comma separated).
    #[arg(long)]
    algo: Option<String>,
    /// Comma separated accuracy targets.
    #[arg(long = "eps-star", value_delimiter = ',')]
    eps_star: Option<Vec<f64>>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Report CSV; written to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// field:bins:path, repeatable.
    #[arg(long)]
    hist: Vec<String>,
    /// Fill the wall_ms column.
    #[arg(long)]
    timing: bool,
}

fn configure(cli: Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = cli.algo {
        c.algorithms = Algorithm::parse_selection(&a)?;
    }
    if let Some(e) = cli.eps_star {
        c.eps_star = e;
    }
    if let Some(n) = cli.realizations {
        c.realizations = n;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if cli.out.is_some() {
        c.out = cli.out;
    }
    for h in &cli.hist {
        c.histograms.push(h.parse::<HistogramSpec>()?);
    }
    c.timing |= cli.timing;
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let config = configure(cli)?;
    // Open the report file up front so a bad path fails before the sweep.
    let out = match &config.out {
        Some(path) => Some(std::fs::File::create(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?),
        None => None,
    };
    let reports = run_experiment(&config)?;
    match out {
        Some(file) => write_csv(&reports, std::io::BufWriter::new(file))?,
        None => write_csv(&reports, std::io::stdout().lock())?,
    }
    for h in &config.histograms {
        emit_histogram(&reports, &h.field, h.bins, &h.path)?;
    }
    for s in summarize(&reports) {
        eprintln!("{s}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pilotlab: {e}");
            match e {
                Error::InvalidConfig(_) | Error::UnknownField(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

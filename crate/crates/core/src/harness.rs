//! Monte Carlo sweeps over drawn scenarios, CSV reports and histograms.
//!
//! Each realization draws its randomness from its own ChaCha8 stream
//! (`seed_from_u64(master)` with the stream index set to the realization
//! counter), so the output does not depend on the worker count.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel_model::{
    build_all_covariances, db_to_linear, generate_scenario, linear_to_db, ChannelCovariance,
    ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::estimator::PilotMatrix;
use crate::kv::KeyValues;
use crate::pilot_design::{
    accuracy_ratios, design_min_energy, design_min_length, design_unconstrained,
    lower_bound_length, DesignConstraints, DEFAULT_DELTA, DEFAULT_EPS_S_FACTOR, DEFAULT_MAX_OUTER,
    DEFAULT_OUTER_TOL,
};
use crate::sdp_engine::{SolveStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    /// Reweighted log-det length minimization.
    Alg1,
    /// Single-shot energy minimization.
    Alg2,
    /// Constructive design without an energy cap.
    Appendix,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Alg1, Algorithm::Alg2, Algorithm::Appendix];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Appendix => "appendix",
        }
    }

    /// Parses a single tag or `all`.
    pub fn parse_selection(s: &str) -> Result<Vec<Algorithm>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Self::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidConfig("no algorithm selected".into()));
        }
        Ok(out)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            "appendix" => Ok(Algorithm::Appendix),
            other => Err(Error::InvalidConfig(format!(
                "unknown algorithm `{other}` (expected alg1, alg2, appendix or all)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `field:bins:path`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSpec {
    pub field: String,
    pub bins: usize,
    pub path: PathBuf,
}

impl FromStr for HistogramSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, ':');
        let (field, bins, path) = match (parts.next(), parts.next(), parts.next()) {
            (Some(f), Some(b), Some(p)) if !f.is_empty() && !p.is_empty() => (f, b, p),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "histogram option `{s}` is not field:bins:path"
                )))
            }
        };
        let bins: usize = bins
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad bin count in `{s}`")))?;
        if bins == 0 {
            return Err(Error::InvalidConfig(
                "histogram needs at least one bin".into(),
            ));
        }
        if !REPORT_FIELDS.contains(&field) {
            return Err(Error::UnknownField(field.to_string()));
        }
        Ok(Self {
            field: field.to_string(),
            bins,
            path: PathBuf::from(path),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub eps_star: Vec<f64>,
    /// Per-antenna energy cap in dB, converted with `10^{dB/10}`.
    pub e_max_db: f64,
    pub delta: f64,
    pub eps_s_factor: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub algorithms: Vec<Algorithm>,
    pub realizations: usize,
    /// Master seed; realization `i` uses stream `i` of this seed.
    pub seed: u64,
    /// Worker threads; 0 lets the thread pool decide.
    pub workers: usize,
    /// Record wall-clock time per design. Off by default so that reports
    /// are reproducible byte for byte.
    pub timing: bool,
    pub solver: SolverOptions,
    pub out: Option<PathBuf>,
    pub histograms: Vec<HistogramSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        Self {
            seed: scenario.seed,
            scenario,
            eps_star: vec![1e-1, 1e-2],
            e_max_db: 41.0,
            delta: DEFAULT_DELTA,
            eps_s_factor: DEFAULT_EPS_S_FACTOR,
            outer_tol: DEFAULT_OUTER_TOL,
            max_outer: DEFAULT_MAX_OUTER,
            algorithms: vec![Algorithm::Alg1, Algorithm::Alg2],
            realizations: 100,
            workers: 0,
            timing: false,
            solver: SolverOptions::default(),
            out: None,
            histograms: Vec::new(),
        }
    }
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse `{s}` in `{key}`")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Reads scenario and experiment keys. Lists are comma separated;
    /// `hist` takes `;`-separated `field:bins:path` entries.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut c = Self {
            scenario: ScenarioConfig::take_from(&mut kv)?,
            ..Self::default()
        };
        c.seed = c.scenario.seed;
        if let Some(raw) = kv.take_raw("eps_star") {
            c.eps_star = parse_list("eps_star", &raw)?;
        }
        if let Some(raw) = kv.take_raw("algo") {
            c.algorithms = Algorithm::parse_selection(&raw)?;
        }
        kv.take("e_max_db", &mut c.e_max_db)?;
        kv.take("delta", &mut c.delta)?;
        kv.take("eps_s_factor", &mut c.eps_s_factor)?;
        kv.take("outer_tol", &mut c.outer_tol)?;
        kv.take("max_outer", &mut c.max_outer)?;
        kv.take("realizations", &mut c.realizations)?;
        kv.take("workers", &mut c.workers)?;
        kv.take("timing", &mut c.timing)?;
        kv.take("gap_tol", &mut c.solver.gap_tol)?;
        kv.take("slack_tol", &mut c.solver.slack_tol)?;
        kv.take("max_iter", &mut c.solver.max_iter)?;
        if let Some(raw) = kv.take_raw("out") {
            c.out = Some(PathBuf::from(raw));
        }
        if let Some(raw) = kv.take_raw("hist") {
            c.histograms = raw
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?;
        }
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        if self.eps_star.is_empty() || self.eps_star.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad(format!(
                "eps_star values must be positive, got {:?}",
                self.eps_star
            ));
        }
        if self.algorithms.is_empty() {
            return bad("no algorithm selected".into());
        }
        if !self.e_max_db.is_finite() {
            return bad("e_max_db must be finite".into());
        }
        if !(self.delta > 0.0) || !(self.eps_s_factor >= 0.0) || !(self.outer_tol > 0.0) {
            return bad("delta and outer_tol must be positive, eps_s_factor non-negative".into());
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        Ok(())
    }

    pub fn e_max(&self) -> f64 {
        db_to_linear(self.e_max_db)
    }

    fn constraints(&self, covs: &[ChannelCovariance], eps_star: f64) -> Result<DesignConstraints> {
        let mut c = DesignConstraints::new(covs, eps_star, self.e_max())?;
        c.delta = self.delta;
        c.eps_s_factor = self.eps_s_factor;
        c.outer_tol = self.outer_tol;
        c.max_outer = self.max_outer;
        Ok(c)
    }
}

/// One design on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    /// Realization counter, i.e. the stream index under the master seed.
    pub seed: u64,
    pub algorithm: Algorithm,
    pub eps_star: f64,
    pub t: usize,
    pub lower_bound: usize,
    pub energy_lin: f64,
    pub energy_db: f64,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `optimal`, `max_iterations`, `infeasible` or `error`.
    pub status: String,
    /// Set for the length design when the outer loop stopped on its change test.
    pub converged: bool,
    /// Set for the length design when the log-det sequence was non-increasing.
    pub log_det_monotone: bool,
    /// `None` unless timing was requested.
    pub wall_ms: Option<f64>,
}

impl DesignReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal.as_str()
    }

    /// Numeric value of a CSV column, for histograms and aggregation.
    pub fn field(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "seed" => self.seed as f64,
            "eps_star" => self.eps_star,
            "T" => self.t as f64,
            "lower_bound" => self.lower_bound as f64,
            "energy_lin" => self.energy_lin,
            "energy_db" => self.energy_db,
            "max_ratio" => self.max_ratio,
            "wall_ms" => self.wall_ms.unwrap_or(f64::NAN),
            other => return Err(Error::UnknownField(other.to_string())),
        })
    }
}

/// Numeric report fields accepted by [`DesignReport::field`].
pub const REPORT_FIELDS: [&str; 8] = [
    "seed",
    "eps_star",
    "T",
    "lower_bound",
    "energy_lin",
    "energy_db",
    "max_ratio",
    "wall_ms",
];

/// The random generator of realization `index`.
pub fn realization_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

fn failed_report(
    seed: u64,
    algorithm: Algorithm,
    eps_star: f64,
    lower_bound: usize,
    users: usize,
    err: &Error,
) -> DesignReport {
    let status = match err {
        Error::Infeasible(_) => "infeasible",
        _ => "error",
    };
    DesignReport {
        seed,
        algorithm,
        eps_star,
        t: 0,
        lower_bound,
        energy_lin: f64::NAN,
        energy_db: f64::NAN,
        ratios: vec![f64::NAN; users],
        max_ratio: f64::NAN,
        status: status.to_string(),
        converged: false,
        log_det_monotone: false,
        wall_ms: None,
    }
}

struct Designed {
    pilots: PilotMatrix,
    status: SolveStatus,
    converged: bool,
    monotone: bool,
}

fn run_design(
    algorithm: Algorithm,
    covs: &[ChannelCovariance],
    constraints: &DesignConstraints,
    solver: &SolverOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Designed> {
    match algorithm {
        Algorithm::Alg1 | Algorithm::Alg2 => {
            let sol = if algorithm == Algorithm::Alg1 {
                design_min_length(covs, constraints, solver)?
            } else {
                design_min_energy(covs, constraints, solver)?
            };
            Ok(Designed {
                monotone: sol.log_det_monotone(),
                converged: sol.converged,
                status: sol.status,
                pilots: sol.pilots,
            })
        }
        Algorithm::Appendix => Ok(Designed {
            pilots: design_unconstrained(covs, constraints, rng)?,
            status: SolveStatus::Optimal,
            converged: true,
            monotone: true,
        }),
    }
}

/// All reports of one realization, ordered by `eps_star` then algorithm.
pub fn run_realization(config: &ExperimentConfig, index: u64) -> Result<Vec<DesignReport>> {
    let mut rng = realization_rng(config.seed, index);
    let scenario = generate_scenario(&config.scenario, &mut rng)?;
    let covs = build_all_covariances(&scenario)?;
    let design_seed: u64 = rng.random();
    let users = covs.len();
    let mut reports = Vec::new();
    for (j, &eps_star) in config.eps_star.iter().enumerate() {
        let constraints = config.constraints(&covs, eps_star)?;
        let lower_bound = lower_bound_length(&covs, &constraints);
        for &algorithm in &config.algorithms {
            let mut design_rng = realization_rng(design_seed, j as u64);
            let start = Instant::now();
            let outcome = run_design(
                algorithm,
                &covs,
                &constraints,
                &config.solver,
                &mut design_rng,
            )
            .and_then(|d| {
                let ratios = accuracy_ratios(&d.pilots, &covs, &constraints)?;
                Ok((d, ratios))
            });
            let wall_ms = config.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            let report = match outcome {
                Ok((d, ratios)) => {
                    let energy_lin = d.pilots.total_energy();
                    DesignReport {
                        seed: index,
                        algorithm,
                        eps_star,
                        t: d.pilots.len(),
                        lower_bound,
                        energy_lin,
                        energy_db: linear_to_db(energy_lin),
                        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
                        ratios,
                        status: d.status.as_str().to_string(),
                        converged: d.converged,
                        log_det_monotone: d.monotone,
                        wall_ms,
                    }
                }
                Err(err) => DesignReport {
                    wall_ms,
                    ..failed_report(index, algorithm, eps_star, lower_bound, users, &err)
                },
            };
            reports.push(report);
        }
    }
    Ok(reports)
}

/// Runs every realization and returns the reports in realization order.
/// Design failures become report rows; only configuration problems abort.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<DesignReport>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start workers: {e}")))?;
    let per_realization: Vec<Result<Vec<DesignReport>>> = pool.install(|| {
        (0..config.realizations as u64)
            .into_par_iter()
            .map(|i| run_realization(config, i))
            .collect()
    });
    let mut reports = Vec::new();
    for r in per_realization {
        reports.extend(r?);
    }
    Ok(reports)
}

fn csv_number(x: f64) -> String {
    format!("{x:?}")
}

/// Header: `seed, algo, eps_star, T, lower_bound, energy_lin, energy_db,
/// max_ratio, status, wall_ms, ratio_0 … ratio_{K-1}`.
pub fn csv_header(users: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "seed",
        "algo",
        "eps_star",
        "T",
        "lower_bound",
        "energy_lin",
        "energy_db",
        "max_ratio",
        "status",
        "wall_ms",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..users).map(|k| format!("ratio_{k}")));
    h
}

pub fn write_csv<W: Write>(reports: &[DesignReport], writer: W) -> Result<()> {
    let users = reports.iter().map(|r| r.ratios.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header(users))?;
    for r in reports {
        let mut row = vec![
            r.seed.to_string(),
            r.algorithm.to_string(),
            csv_number(r.eps_star),
            r.t.to_string(),
            r.lower_bound.to_string(),
            csv_number(r.energy_lin),
            csv_number(r.energy_db),
            csv_number(r.max_ratio),
            r.status.clone(),
            r.wall_ms.map(csv_number).unwrap_or_default(),
        ];
        row.extend((0..users).map(|k| r.ratios.get(k).map(|&x| csv_number(x)).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(reports: &[DesignReport], path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(reports, file)
}

/// Parses a file written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<DesignReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let users = rdr.headers()?.len().saturating_sub(10);
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidConfig(format!("bad number `{s}` in report")))
    };
    let int = |s: &str| -> Result<u64> {
        s.parse()
            .map_err(|_| Error::InvalidConfig(format!("bad integer `{s}` in report")))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let ratios = (0..users)
            .map(|k| num(&rec[10 + k]))
            .collect::<Result<Vec<f64>>>()?;
        out.push(DesignReport {
            seed: int(&rec[0])?,
            algorithm: rec[1].parse()?,
            eps_star: num(&rec[2])?,
            t: int(&rec[3])? as usize,
            lower_bound: int(&rec[4])? as usize,
            energy_lin: num(&rec[5])?,
            energy_db: num(&rec[6])?,
            max_ratio: num(&rec[7])?,
            status: rec[8].to_string(),
            wall_ms: if rec[9].is_empty() {
                None
            } else {
                Some(num(&rec[9])?)
            },
            ratios,
            converged: false,
            log_det_monotone: false,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub frequency: f64,
}

/// Equal-width histogram over the finite values. Non-finite values are
/// skipped; a constant sample gets a unit-wide range centred on it.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<Bin>> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if finite.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if lo == hi {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &finite {
        let i = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = finite.len();
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| Bin {
            low: lo + width * i as f64,
            high: if i + 1 == bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count,
            frequency: if n > 0 { count as f64 / n as f64 } else { 0.0 },
        })
        .collect())
}

pub fn emit_histogram(
    reports: &[DesignReport],
    field: &str,
    bins: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if !REPORT_FIELDS.contains(&field) {
        return Err(Error::UnknownField(field.to_string()));
    }
    let values = reports
        .iter()
        .map(|r| r.field(field))
        .collect::<Result<Vec<f64>>>()?;
    let hist = histogram(&values, bins)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_low", "bin_high", "count", "frequency"])?;
    for b in hist {
        w.write_record([
            csv_number(b.low),
            csv_number(b.high),
            b.count.to_string(),
            csv_number(b.frequency),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per `(algorithm, eps_star)` averages over the non-failed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub eps_star: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean_t: f64,
    pub mean_lower_bound: f64,
    pub mean_energy: f64,
    /// Fraction of successful rows whose `max_ratio ≤ 1.01`.
    pub within_1pct: f64,
}

pub fn summarize(reports: &[DesignReport]) -> Vec<Summary> {
    let mut keys: Vec<(Algorithm, f64)> = Vec::new();
    for r in reports {
        if !keys
            .iter()
            .any(|&(a, e)| a == r.algorithm && e == r.eps_star)
        {
            keys.push((r.algorithm, r.eps_star));
        }
    }
    keys.into_iter()
        .map(|(algorithm, eps_star)| {
            let rows: Vec<&DesignReport> = reports
                .iter()
                .filter(|r| r.algorithm == algorithm && r.eps_star == eps_star)
                .collect();
            let ok: Vec<&&DesignReport> =
                rows.iter().filter(|r| r.energy_lin.is_finite()).collect();
            let n = ok.len().max(1) as f64;
            Summary {
                algorithm,
                eps_star,
                runs: rows.len(),
                failures: rows.len() - ok.len(),
                mean_t: ok.iter().map(|r| r.t as f64).sum::<f64>() / n,
                mean_lower_bound: ok.iter().map(|r| r.lower_bound as f64).sum::<f64>() / n,
                mean_energy: ok.iter().map(|r| r.energy_lin).sum::<f64>() / n,
                within_1pct: ok.iter().filter(|r| r.max_ratio <= 1.01).count() as f64 / n,
            }
        })
        .collect()
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<8} eps*={:<8} runs={:<4} failed={:<3} mean T={:6.2} (bound {:5.2})  mean energy={:.4e} ({:.2} dB)  max ratio<=1.01: {:5.1}%",
            self.algorithm.as_str(),
            self.eps_star,
            self.runs,
            self.failures,
            self.mean_t,
            self.mean_lower_bound,
            self.mean_energy,
            linear_to_db(self.mean_energy),
            100.0 * self.within_1pct
        )
    }
}

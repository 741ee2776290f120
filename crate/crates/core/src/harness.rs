//! Monte-Carlo SER harness.
//!
//! Every algorithm equalizes the same realization and symbol block at each
//! (SNR, trial) point, running over the fabric it is designed for so that
//! the bandwidth column comes from the ledger, not from a formula. Trials
//! run on a rayon pool; per-trial outcomes are folded in a fixed order, so
//! the report does not depend on the number of workers.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use num_rational::Ratio;
use rayon::prelude::*;
use thiserror::Error;

use crate::dbpnet::{
    make_dus, run_bcd_daisy, run_bdac, run_cdr_star, run_centralized_star, run_lrd_daisy, run_sdr_star, DbpError, Fabric,
    ProtocolOutput, Topology,
};
use crate::equalizers::{Algorithm, BcdStop, RankRule};
use crate::scenario::{gen_realization, gen_symbols, slice_index, ConfigError, SystemConfig};

pub const THREADS_ENV: &str = "DBP_EQ_THREADS";

/// Default BCD sweep budget.
pub const DEFAULT_SWEEPS: usize = 4;

/// Sweep cap for tolerance-stopped BCD.
pub const MAX_TOL_SWEEPS: usize = 50_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid algorithm spec '{spec}': {reason}")]
    AlgorithmSpec { spec: String, reason: String },
    #[error("{0}")]
    Spec(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// Low-rank rank choice for BCD-LRD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankChoice {
    Fixed(usize),
    Auto,
}

/// One algorithm with its parameters, written as `name[:key=value,...]`,
/// e.g. `bcd:T=1`, `bcd:tol=1e-12`, `bcd-lrd:T=4,r=4`, `bcd-lrd:r=auto`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    pub sweeps: Option<usize>,
    pub tol: Option<f64>,
    pub rank: Option<RankChoice>,
}

impl AlgorithmSpec {
    pub fn plain(algorithm: Algorithm) -> Self {
        Self { algorithm, sweeps: None, tol: None, rank: None }
    }

    pub fn bcd(sweeps: usize) -> Self {
        Self { sweeps: Some(sweeps), ..Self::plain(Algorithm::Bcd) }
    }

    pub fn bcd_converged(tol: f64) -> Self {
        Self { tol: Some(tol), ..Self::plain(Algorithm::Bcd) }
    }

    pub fn bcd_lrd(sweeps: usize, rank: usize) -> Self {
        Self { sweeps: Some(sweeps), rank: Some(RankChoice::Fixed(rank)), ..Self::plain(Algorithm::BcdLrd) }
    }

    fn is_bcd(&self) -> bool {
        matches!(self.algorithm, Algorithm::Bcd | Algorithm::BcdLrd)
    }

    /// Fills unset BCD parameters from the run defaults.
    pub fn resolved(&self, sweeps: usize, rank: usize) -> Self {
        let mut out = self.clone();
        if out.is_bcd() && out.tol.is_none() && out.sweeps.is_none() {
            out.sweeps = Some(sweeps);
        }
        if out.algorithm == Algorithm::BcdLrd && out.rank.is_none() {
            out.rank = Some(RankChoice::Fixed(rank));
        }
        out
    }

    pub fn stop(&self) -> BcdStop {
        match (self.tol, self.sweeps) {
            (Some(tol), max) => BcdStop::tolerance(tol, max.unwrap_or(MAX_TOL_SWEEPS)),
            (None, t) => BcdStop::sweeps(t.unwrap_or(DEFAULT_SWEEPS)),
        }
    }

    pub fn rank_rule(&self) -> RankRule {
        match self.rank {
            Some(RankChoice::Auto) => RankRule::Threshold(RankRule::DEFAULT_THRESHOLD),
            Some(RankChoice::Fixed(r)) => RankRule::Fixed(r),
            None => RankRule::Threshold(RankRule::DEFAULT_THRESHOLD),
        }
    }

    pub fn topology(&self, c: usize) -> Topology {
        match self.algorithm {
            Algorithm::Bcd | Algorithm::BcdLrd => Topology::daisy(c),
            _ => Topology::star(c),
        }
    }
}

impl fmt::Display for AlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.algorithm.name())?;
        let mut params = Vec::new();
        if let Some(t) = self.sweeps {
            params.push(format!("T={t}"));
        }
        if let Some(tol) = self.tol {
            params.push(format!("tol={tol:e}"));
        }
        match self.rank {
            Some(RankChoice::Fixed(r)) => params.push(format!("r={r}")),
            Some(RankChoice::Auto) => params.push("r=auto".into()),
            None => {}
        }
        if !params.is_empty() {
            write!(f, ":{}", params.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for AlgorithmSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| HarnessError::AlgorithmSpec { spec: s.to_string(), reason };
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let algorithm: Algorithm = name.parse().map_err(err)?;
        let mut spec = AlgorithmSpec::plain(algorithm);
        for kv in params.into_iter().flat_map(|p| p.split(',')) {
            let (key, value) = kv.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{kv}'")))?;
            let key = key.trim();
            let value = value.trim();
            let bcd_only = |spec: &AlgorithmSpec| {
                if spec.is_bcd() {
                    Ok(())
                } else {
                    Err(err(format!("'{key}' applies only to bcd and bcd-lrd")))
                }
            };
            match key {
                "T" => {
                    bcd_only(&spec)?;
                    let t: usize = value.parse().map_err(|_| err(format!("T must be a positive integer, got '{value}'")))?;
                    if t == 0 {
                        return Err(err("T must be at least 1".into()));
                    }
                    spec.sweeps = Some(t);
                }
                "tol" => {
                    bcd_only(&spec)?;
                    let tol: f64 = value.parse().map_err(|_| err(format!("tol must be a number, got '{value}'")))?;
                    if !(tol > 0.0) {
                        return Err(err("tol must be positive".into()));
                    }
                    spec.tol = Some(tol);
                }
                "r" if algorithm == Algorithm::BcdLrd => {
                    spec.rank = Some(if value == "auto" {
                        RankChoice::Auto
                    } else {
                        let r: usize = value.parse().map_err(|_| err(format!("r must be an integer or 'auto', got '{value}'")))?;
                        RankChoice::Fixed(r)
                    });
                }
                other => return Err(err(format!("unknown parameter '{other}'"))),
            }
        }
        Ok(spec)
    }
}

/// Parses a comma-separated list where parameters follow a colon, e.g.
/// `lmmse,bcd:T=1,bcd-lrd:T=4,r=4,sdr`. A bare `key=value` continues the
/// previous entry's parameter list.
pub fn parse_algorithm_list(list: &str) -> Result<Vec<AlgorithmSpec>, HarnessError> {
    let mut items: Vec<String> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match items.last_mut() {
            Some(prev) if part.contains('=') && !part.contains(':') => {
                prev.push(if prev.contains(':') { ',' } else { ':' });
                prev.push_str(part);
            }
            _ => items.push(part.to_string()),
        }
    }
    if items.is_empty() {
        return Err(HarnessError::Spec("algorithm list is empty".into()));
    }
    items.iter().map(|s| s.parse()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub cfg: SystemConfig,
    pub algorithms: Vec<AlgorithmSpec>,
    pub snr_grid: Vec<f64>,
    pub trials: usize,
    /// BCD sweeps when an algorithm does not say.
    pub sweeps: usize,
    /// BCD-LRD rank when an algorithm does not say.
    pub rank: usize,
    /// Record wall-clock time per row (makes the CSV non-reproducible).
    pub timing: bool,
    /// Worker cap; `None` reads the environment, then uses all cores.
    pub threads: Option<usize>,
    /// Keep the message log of the first trial at the first SNR.
    pub capture_messages: bool,
}

impl RunSpec {
    pub fn new(cfg: SystemConfig, algorithms: Vec<AlgorithmSpec>, snr_grid: Vec<f64>, trials: usize) -> Self {
        let rank = cfg.n_interf;
        Self {
            cfg,
            algorithms,
            snr_grid,
            trials,
            sweeps: DEFAULT_SWEEPS,
            rank,
            timing: false,
            threads: None,
            capture_messages: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.cfg.validate()?;
        if self.trials == 0 {
            return Err(HarnessError::Spec("trials must be at least 1".into()));
        }
        if self.snr_grid.is_empty() || self.snr_grid.iter().any(|s| !s.is_finite()) {
            return Err(HarnessError::Spec("SNR grid must be non-empty and finite".into()));
        }
        if self.algorithms.is_empty() {
            return Err(HarnessError::Spec("no algorithms selected".into()));
        }
        if self.sweeps == 0 {
            return Err(HarnessError::Spec("T must be at least 1".into()));
        }
        Ok(())
    }

    fn resolved_algorithms(&self) -> Vec<AlgorithmSpec> {
        self.algorithms.iter().map(|a| a.resolved(self.sweeps, self.rank)).collect()
    }
}

/// One CSV row. `ser` is `None` when any trial failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SerRow {
    pub algorithm: String,
    pub snr_db: f64,
    pub iot_db: f64,
    pub m: usize,
    pub c: usize,
    pub k: usize,
    pub n: usize,
    pub t: Option<usize>,
    pub r: Option<usize>,
    pub ser: Option<f64>,
    pub mse: Option<f64>,
    pub avg_entries_per_symbol: Option<f64>,
    pub wallclock_s: Option<f64>,
    /// Symbol errors and symbols behind `ser` (not written to CSV).
    pub errors: u64,
    pub symbols: u64,
    pub failure: Option<String>,
}

impl SerRow {
    pub fn failed(&self) -> bool {
        self.ser.is_none()
    }
}

pub const CSV_HEADER: [&str; 13] =
    ["algorithm", "snr_db", "iot_db", "M", "C", "K", "N", "T", "r", "ser", "mse", "avg_entries_per_symbol", "wallclock_s"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SerReport {
    pub rows: Vec<SerRow>,
    /// `(algorithm label, log dump)` when message capture was requested.
    pub message_logs: Vec<(String, String)>,
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SerReport {
    pub fn rows_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a SerRow> + 'a {
        self.rows.iter().filter(move |r| r.algorithm == label)
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(SerRow::failed)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let fail = || "FAIL".to_string();
            w.write_record([
                r.algorithm.clone(),
                r.snr_db.to_string(),
                r.iot_db.to_string(),
                r.m.to_string(),
                r.c.to_string(),
                r.k.to_string(),
                r.n.to_string(),
                fmt_opt(r.t),
                fmt_opt(r.r),
                r.ser.map_or_else(fail, |v| v.to_string()),
                r.mse.map_or_else(fail, |v| v.to_string()),
                r.avg_entries_per_symbol.map_or_else(fail, |v| v.to_string()),
                fmt_opt(r.wallclock_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: &Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(io::BufWriter::new(file)).map_err(io::Error::other)
    }
}

/// Outcome of one algorithm on one trial.
#[derive(Debug, Clone)]
struct TrialOutcome {
    result: Result<TrialStats, String>,
    seconds: f64,
    log: Option<String>,
}

#[derive(Debug, Clone)]
struct TrialStats {
    errors: u64,
    symbols: u64,
    sq_error: f64,
    entries: Ratio<u64>,
    sweeps: usize,
}

/// Runs one algorithm over its fabric on one trial's data.
pub fn run_protocol(
    spec: &AlgorithmSpec,
    cfg: &SystemConfig,
    fabric: &mut Fabric,
    dus: &mut [crate::dbpnet::DuState],
) -> Result<ProtocolOutput, DbpError> {
    let es = cfg.es;
    match spec.algorithm {
        Algorithm::Zf | Algorithm::Lmmse => run_centralized_star(fabric, dus, es, spec.algorithm),
        Algorithm::Bdac => run_bdac(fabric, dus, es),
        Algorithm::Sdr => run_sdr_star(fabric, dus, es),
        Algorithm::Cdr => run_cdr_star(fabric, dus, es),
        Algorithm::Bcd => run_bcd_daisy(fabric, dus, es, spec.stop(), false).map(|(o, _)| o),
        Algorithm::BcdLrd => {
            run_lrd_daisy(fabric, dus, spec.rank_rule())?;
            run_bcd_daisy(fabric, dus, es, spec.stop(), true).map(|(o, _)| o)
        }
    }
}

fn run_trial(algorithms: &[AlgorithmSpec], cfg: &SystemConfig, trial: u64, timing: bool, capture: bool) -> Vec<TrialOutcome> {
    let real = gen_realization(cfg, trial);
    let sym = gen_symbols(cfg, &real, trial);
    algorithms
        .iter()
        .map(|spec| {
            let start = timing.then(Instant::now);
            let mut dus = make_dus(&real, &sym.y);
            let mut fabric = Fabric::new(spec.topology(cfg.c), cfg.n_coh);
            let result = run_protocol(spec, cfg, &mut fabric, &mut dus).map_err(|e| e.to_string()).and_then(|out| {
                if !out.estimate.is_finite() {
                    return Err("non-finite symbol estimate".to_string());
                }
                let mut errors = 0;
                let mut sq_error = 0.0;
                for ((est, tx), &idx) in out.estimate.data().iter().zip(sym.s.data()).zip(&sym.indices) {
                    if slice_index(*est, cfg.modulation, cfg.es) != idx {
                        errors += 1;
                    }
                    sq_error += (est - tx).norm_sqr();
                }
                Ok(TrialStats {
                    errors,
                    symbols: sym.indices.len() as u64,
                    sq_error,
                    entries: fabric.ledger().per_symbol_average(),
                    sweeps: out.equalizer.iterations,
                })
            });
            TrialOutcome {
                result,
                seconds: start.map_or(0.0, |s| s.elapsed().as_secs_f64()),
                log: capture.then(|| fabric.dump_log()),
            }
        })
        .collect()
}

/// Worker count: explicit cap, else the environment, else all cores.
pub fn worker_count(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs every algorithm on shared realizations over the SNR grid.
pub fn run_sweep(spec: &RunSpec) -> Result<SerReport, HarnessError> {
    spec.validate()?;
    let algorithms = spec.resolved_algorithms();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(spec.threads))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;

    let points: Vec<(usize, u64)> =
        (0..spec.snr_grid.len()).flat_map(|s| (0..spec.trials as u64).map(move |t| (s, t))).collect();
    let outcomes: Vec<Vec<TrialOutcome>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(s, t)| {
                let cfg = SystemConfig { snr_db: spec.snr_grid[s], ..spec.cfg.clone() };
                let capture = spec.capture_messages && s == 0 && t == 0;
                run_trial(&algorithms, &cfg, t, spec.timing, capture)
            })
            .collect()
    });

    let mut report = SerReport::default();
    if spec.capture_messages {
        if let Some(first) = outcomes.first() {
            for (a, o) in algorithms.iter().zip(first) {
                report.message_logs.push((a.to_string(), o.log.clone().unwrap_or_default()));
            }
        }
    }
    for (ai, alg) in algorithms.iter().enumerate() {
        for (si, &snr) in spec.snr_grid.iter().enumerate() {
            let trials = &outcomes[si * spec.trials..(si + 1) * spec.trials];
            report.rows.push(aggregate(alg, spec, snr, trials.iter().map(|o| &o[ai])));
        }
    }
    report.rows.sort_by(|a, b| a.algorithm.cmp(&b.algorithm).then(a.snr_db.total_cmp(&b.snr_db)));
    Ok(report)
}

fn aggregate<'a>(alg: &AlgorithmSpec, spec: &RunSpec, snr: f64, trials: impl Iterator<Item = &'a TrialOutcome>) -> SerRow {
    let cfg = &spec.cfg;
    let mut row = SerRow {
        algorithm: alg.to_string(),
        snr_db: snr,
        iot_db: cfg.iot_db,
        m: cfg.m,
        c: cfg.c,
        k: cfg.k,
        n: cfg.n,
        t: alg.sweeps.filter(|_| alg.tol.is_none()),
        r: match alg.rank {
            Some(RankChoice::Fixed(r)) => Some(r),
            _ => None,
        },
        ser: None,
        mse: None,
        avg_entries_per_symbol: None,
        wallclock_s: None,
        errors: 0,
        symbols: 0,
        failure: None,
    };
    let mut sq_error = 0.0;
    let mut entries = Ratio::from_integer(0u64);
    let mut count = 0u64;
    let mut seconds = 0.0;
    let mut sweeps = Vec::new();
    for o in trials {
        seconds += o.seconds;
        match &o.result {
            Ok(s) => {
                row.errors += s.errors;
                row.symbols += s.symbols;
                sq_error += s.sq_error;
                entries += s.entries;
                count += 1;
                sweeps.push(s.sweeps);
            }
            Err(e) => {
                if row.failure.is_none() {
                    row.failure = Some(e.clone());
                }
            }
        }
    }
    if spec.timing {
        row.wallclock_s = Some(seconds);
    }
    if row.failure.is_none() && count > 0 {
        let avg = entries / Ratio::from_integer(count);
        row.ser = Some(row.errors as f64 / row.symbols as f64);
        row.mse = Some(sq_error / row.symbols as f64);
        row.avg_entries_per_symbol = Some(*avg.numer() as f64 / *avg.denom() as f64);
        if alg.tol.is_some() && sweeps.iter().all(|&t| t == sweeps[0]) {
            row.t = sweeps.first().copied();
        }
    }
    row
}

/// Result of comparing two algorithms point by point.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingVerdict {
    /// `(snr_db, ser_a − ser_b)` at every grid point.
    pub differences: Vec<(f64, f64)>,
    /// Grid points with enough errors to compare.
    pub eligible: usize,
    /// Eligible points where A's SER does not exceed B's.
    pub a_not_worse: usize,
    pub outcome: Ordering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// A ≤ B at the required fraction of eligible points.
    ANotWorse,
    AWorse,
    /// Identical results at every point.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrderingError {
    #[error("algorithm '{0}' not in report")]
    Missing(String),
    #[error("'{0}' and '{1}' were not run on the same grid")]
    GridMismatch(String, String),
    #[error("'{0}' failed at SNR {1} dB")]
    Failed(String, f64),
    #[error("no grid point has at least {floor} symbol errors")]
    InsufficientErrors { floor: u64 },
}

pub const ERROR_FLOOR: u64 = 100;
pub const ORDERING_FRACTION: f64 = 0.8;

/// Checks `SER(A) ≤ SER(B)` at no less than `ORDERING_FRACTION` of the grid
/// points where either algorithm made at least `ERROR_FLOOR` symbol errors.
pub fn paired_ordering_test(report: &SerReport, a: &str, b: &str) -> Result<OrderingVerdict, OrderingError> {
    paired_ordering_test_with(report, a, b, ERROR_FLOOR, ORDERING_FRACTION)
}

pub fn paired_ordering_test_with(
    report: &SerReport,
    a: &str,
    b: &str,
    floor: u64,
    fraction: f64,
) -> Result<OrderingVerdict, OrderingError> {
    let rows_a: Vec<&SerRow> = report.rows_for(a).collect();
    let rows_b: Vec<&SerRow> = report.rows_for(b).collect();
    if rows_a.is_empty() {
        return Err(OrderingError::Missing(a.into()));
    }
    if rows_b.is_empty() {
        return Err(OrderingError::Missing(b.into()));
    }
    if rows_a.len() != rows_b.len() || rows_a.iter().zip(&rows_b).any(|(x, y)| x.snr_db != y.snr_db || x.iot_db != y.iot_db) {
        return Err(OrderingError::GridMismatch(a.into(), b.into()));
    }
    let mut differences = Vec::new();
    let mut eligible = 0;
    let mut a_not_worse = 0;
    for (ra, rb) in rows_a.iter().zip(&rows_b) {
        let (Some(sa), Some(sb)) = (ra.ser, rb.ser) else {
            let bad = if ra.failed() { ra } else { rb };
            return Err(OrderingError::Failed(bad.algorithm.clone(), bad.snr_db));
        };
        differences.push((ra.snr_db, sa - sb));
        if ra.errors.max(rb.errors) >= floor {
            eligible += 1;
            if ra.errors * rb.symbols <= rb.errors * ra.symbols {
                a_not_worse += 1;
            }
        }
    }
    let identical = rows_a.iter().zip(&rows_b).all(|(x, y)| x.errors == y.errors && x.symbols == y.symbols && x.mse == y.mse);
    let outcome = if identical {
        Ordering::Equal
    } else if eligible == 0 {
        return Err(OrderingError::InsufficientErrors { floor });
    } else if a_not_worse as f64 >= fraction * eligible as f64 {
        Ordering::ANotWorse
    } else {
        Ordering::AWorse
    };
    Ok(OrderingVerdict { differences, eligible, a_not_worse, outcome })
}

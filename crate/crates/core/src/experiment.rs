//! Configuration-driven policy sweeps over a ground-truth curve file.
//!
//! A sweep runs every combination of policy, target, horizon, cost vector,
//! penalty and seed through the simulator and writes three reports into the
//! output directory: `runs.csv` (one row per run), `aggregate.csv` (one row
//! per policy and horizon) and `summary.json` (config echo, library version
//! and the aggregate table).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::RegressionBaseline;
use crate::curves::{CurveFamily, FitConfig, FitInit};
use crate::density::{log_bandwidth_grid, CensorPolicy};
use crate::planner::{ProblemSpec, SolverConfig};
use crate::simulator::{
    aggregate_metrics, cost_ratio, points_ratio, run_collection, GroundTruthCurve1D, GroundTruthSurface2D, LocConfig,
    MetricsReport, Oracle, Policy, RunRecord, SimConfig,
};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "DATAREQ_WORKERS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}: line {line}: duplicate size {size}")]
    DuplicateSize { path: String, line: u64, size: String },
    #[error("{path}: grid is missing points {missing:?}")]
    IncompleteGrid { path: String, missing: Vec<(f64, f64)> },
    #[error("generator is not non-decreasing on the requested range: {0}")]
    NonMonotoneGenerator(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ExperimentError {
    /// Process exit status for this error: 3 for I/O, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Loc,
    Regression,
    Corrected,
}

impl PolicyKind {
    fn name(self) -> &'static str {
        match self {
            Self::Loc => "loc",
            Self::Regression => "regression",
            Self::Corrected => "corrected",
        }
    }
}

fn default_sources() -> usize {
    1
}
fn default_resamples() -> usize {
    500
}
fn default_cap_factor() -> f64 {
    100.0
}
fn default_fit_iterations() -> usize {
    FitConfig::default().max_iterations
}
fn default_bandwidth_min() -> f64 {
    200.0
}
fn default_bandwidth_max() -> f64 {
    4000.0
}
fn default_bandwidth_count() -> usize {
    20
}
fn default_components() -> Vec<usize> {
    (4..=10).collect()
}
fn default_max_steps() -> usize {
    SolverConfig::default().max_steps
}
fn default_patience() -> usize {
    SolverConfig::default().patience
}
fn default_subsets() -> usize {
    10
}
fn default_trim() -> f64 {
    99.0
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Sweep description, read from a flat TOML file. Relative paths are
/// resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub curve_file: PathBuf,
    #[serde(default = "default_sources")]
    pub sources: usize,
    pub policies: Vec<PolicyKind>,
    /// Explicit targets; used instead of the `target_min..target_max` sweep.
    #[serde(default)]
    pub targets: Vec<f64>,
    pub target_min: Option<f64>,
    pub target_max: Option<f64>,
    pub target_step: Option<f64>,
    pub horizons: Vec<usize>,
    pub costs: Vec<Vec<f64>>,
    pub penalties: Vec<f64>,
    pub seeds: Vec<u64>,
    pub q0: Vec<f64>,
    /// Score offset used by the `corrected` policy.
    #[serde(default)]
    pub tau: f64,
    /// Regression family; defaults to the power law (additive for several sources).
    pub family: Option<CurveFamily>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub censor_policy: CensorPolicy,
    #[serde(default = "default_cap_factor")]
    pub q_cap_factor: f64,
    #[serde(default = "default_fit_iterations")]
    pub fit_max_iterations: usize,
    #[serde(default = "default_init")]
    pub fit_init: InitKind,
    /// Explicit KDE bandwidths; otherwise a log grid from `bandwidth_min` to `bandwidth_max`.
    pub bandwidths: Option<Vec<f64>>,
    #[serde(default = "default_bandwidth_min")]
    pub bandwidth_min: f64,
    #[serde(default = "default_bandwidth_max")]
    pub bandwidth_max: f64,
    #[serde(default = "default_bandwidth_count")]
    pub bandwidth_count: usize,
    #[serde(default = "default_components")]
    pub gmm_components: Vec<usize>,
    pub learning_rates: Option<Vec<f64>>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_subsets")]
    pub subsets: usize,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "default_trim")]
    pub trim_percentile: f64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Default,
    Profiled,
}

fn default_init() -> InitKind {
    InitKind::Profiled
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, ExperimentError> {
    Err(ExperimentError::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Read a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.curve_file.is_relative() {
            cfg.curve_file = base.join(&cfg.curve_file);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn family(&self) -> CurveFamily {
        self.family.unwrap_or(if self.sources == 1 {
            CurveFamily::PowerLaw
        } else {
            CurveFamily::AdditivePowerLaw(self.sources)
        })
    }

    pub fn target_list(&self) -> Result<Vec<f64>, ExperimentError> {
        if !self.targets.is_empty() {
            if self.target_min.is_some() || self.target_max.is_some() || self.target_step.is_some() {
                return config_err("give either `targets` or the target_min/max/step sweep, not both");
            }
            return Ok(self.targets.clone());
        }
        let (Some(lo), Some(hi), Some(step)) = (self.target_min, self.target_max, self.target_step) else {
            return config_err("no targets: set `targets` or target_min, target_max and target_step");
        };
        if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return config_err("target sweep needs finite min <= max and a positive step");
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| lo + i as f64 * step).collect())
    }

    pub fn bandwidth_list(&self) -> Vec<f64> {
        self.bandwidths
            .clone()
            .unwrap_or_else(|| log_bandwidth_grid(self.bandwidth_min, self.bandwidth_max, self.bandwidth_count))
    }

    fn fit(&self) -> FitConfig {
        FitConfig {
            max_iterations: self.fit_max_iterations,
            ..FitConfig::default()
        }
    }

    fn init(&self) -> FitInit {
        match self.fit_init {
            InitKind::Default => FitInit::Default,
            InitKind::Profiled => FitInit::Profiled,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let mut s = SolverConfig {
            max_steps: self.max_steps,
            patience: self.patience,
            ..SolverConfig::default()
        };
        if let Some(lrs) = &self.learning_rates {
            s.learning_rates = lrs.clone();
        }
        s
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            subsets: self.subsets,
            noise_sd: self.noise_sd,
        }
    }

    pub fn policy(&self, kind: PolicyKind) -> Policy {
        let baseline = RegressionBaseline {
            family: self.family(),
            fit: self.fit(),
            init: self.init(),
            q_cap_factor: self.q_cap_factor,
        };
        match kind {
            PolicyKind::Loc => Policy::Loc(LocConfig {
                resamples: self.resamples,
                family: self.family(),
                censor_policy: self.censor_policy,
                q_cap_factor: self.q_cap_factor,
                fit: self.fit(),
                init: self.init(),
                bandwidths: self.bandwidth_list(),
                gmm_components: self.gmm_components.clone(),
                solver: self.solver(),
            }),
            PolicyKind::Regression => Policy::RegressionPoint(baseline),
            PolicyKind::Corrected => Policy::RegressionCorrected { tau: self.tau, baseline },
        }
    }

    /// Check every setting and load the oracle.
    pub fn validate(&self) -> Result<Oracle, ExperimentError> {
        let k = self.sources;
        if !(1..=2).contains(&k) {
            return config_err("sources must be 1 or 2");
        }
        if self.policies.is_empty() {
            return config_err("policies must be non-empty");
        }
        let targets = self.target_list()?;
        if targets.is_empty() || targets.iter().any(|t| !t.is_finite()) {
            return config_err("targets must be finite and non-empty");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return config_err("horizons must be non-empty and at least 1");
        }
        if self.costs.is_empty() {
            return config_err("costs must be non-empty");
        }
        for c in &self.costs {
            if c.len() != k || c.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return config_err(format!("each cost vector needs {k} positive entries"));
            }
        }
        if self.penalties.is_empty() || self.penalties.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return config_err("penalties must be non-empty and positive");
        }
        if self.seeds.is_empty() {
            return config_err("seeds must be non-empty");
        }
        if self.q0.len() != k || self.q0.iter().any(|q| !(*q >= 0.0 && q.is_finite())) || self.q0.iter().sum::<f64>() <= 0.0 {
            return config_err(format!("q0 needs {k} non-negative entries with a positive total"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return config_err("tau must be non-negative");
        }
        if self.family().source_count() != k {
            return config_err("family does not match the number of sources");
        }
        if self.resamples < 2 {
            return config_err("resamples must be at least 2");
        }
        if !(self.q_cap_factor > 1.0) {
            return config_err("q_cap_factor must exceed 1");
        }
        if self.fit_max_iterations == 0 {
            return config_err("fit_max_iterations must be at least 1");
        }
        let bw = self.bandwidth_list();
        if bw.is_empty() || bw.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return config_err("bandwidths must be positive");
        }
        if self.gmm_components.is_empty() || self.gmm_components.iter().any(|c| !(1..=10).contains(c)) {
            return config_err("gmm_components must lie in 1..=10");
        }
        if self.gmm_components.iter().any(|c| *c > self.resamples) {
            return config_err("gmm_components cannot exceed resamples");
        }
        self.solver().validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.subsets == 0 {
            return config_err("subsets must be at least 1");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return config_err("noise_sd must be non-negative");
        }
        if !(0.0..=100.0).contains(&self.trim_percentile) {
            return config_err("trim_percentile must lie in [0, 100]");
        }
        let oracle = load_curve_file(&self.curve_file)?;
        if oracle.dimension() != k {
            return config_err(format!(
                "curve file has {} sources, config says {k}",
                oracle.dimension()
            ));
        }
        Ok(oracle)
    }
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64, ExperimentError> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ExperimentError::Parse {
        path: path.display().to_string(),
        line,
        message: format!("not a finite number: {field:?}"),
    })
}

/// Read a ground-truth curve: header `size,score` for one source, or
/// `size1,size2,score` for a complete grid over two sources.
pub fn load_curve_file(path: &Path) -> Result<Oracle, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ExperimentError::Parse {
            path: shown.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let parse_err = |line: u64, message: String| ExperimentError::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut rows: Vec<(u64, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let vals = rec.iter().map(|f| parse_f64(path, line, f)).collect::<Result<Vec<_>, _>>()?;
        rows.push((line, vals));
    }
    match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["size", "score"] => {
            rows.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
            for w in rows.windows(2) {
                if w[0].1[0] == w[1].1[0] {
                    return Err(ExperimentError::DuplicateSize {
                        path: shown,
                        line: w[0].0.max(w[1].0),
                        size: w[1].1[0].to_string(),
                    });
                }
            }
            let knots = rows.into_iter().map(|(_, v)| (v[0], v[1])).collect();
            GroundTruthCurve1D::new(knots)
                .map(Oracle::Curve)
                .map_err(|e| parse_err(0, e.to_string()))
        }
        ["size1", "size2", "score"] => {
            let mut grid: BTreeMap<(u64, u64), (u64, f64)> = BTreeMap::new();
            let key = |v: f64| v.to_bits();
            for (line, v) in &rows {
                if grid.insert((key(v[0]), key(v[1])), (*line, v[2])).is_some() {
                    return Err(ExperimentError::DuplicateSize {
                        path: shown,
                        line: *line,
                        size: format!("({}, {})", v[0], v[1]),
                    });
                }
            }
            let mut xs: Vec<f64> = rows.iter().map(|(_, v)| v[0]).collect();
            let mut ys: Vec<f64> = rows.iter().map(|(_, v)| v[1]).collect();
            for g in [&mut xs, &mut ys] {
                g.sort_by(f64::total_cmp);
                g.dedup();
            }
            let mut missing = Vec::new();
            let mut scores = vec![vec![0.0; ys.len()]; xs.len()];
            for (i, x) in xs.iter().enumerate() {
                for (j, y) in ys.iter().enumerate() {
                    match grid.get(&(key(*x), key(*y))) {
                        Some((_, s)) => scores[i][j] = *s,
                        None => missing.push((*x, *y)),
                    }
                }
            }
            if !missing.is_empty() {
                return Err(ExperimentError::IncompleteGrid { path: shown, missing });
            }
            GroundTruthSurface2D::new(xs, ys, scores)
                .map(Oracle::Surface)
                .map_err(|e| parse_err(0, e.to_string()))
        }
        other => Err(parse_err(1, format!("unrecognized header {other:?}"))),
    }
}

/// Analytic generator for synthetic curve files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `θ0 q^θ1 + θ2`
    PowerLaw([f64; 3]),
    /// `θ0 ln(q + θ1) + θ2`
    Logarithmic([f64; 3]),
}

impl SynthKind {
    pub fn eval(&self, q: f64) -> f64 {
        match *self {
            Self::PowerLaw([a, b, c]) => a * q.powf(b) + c,
            Self::Logarithmic([a, b, c]) => a * (q + b).ln() + c,
        }
    }
}

/// Knots of a synthetic curve at `knot_count` log-spaced sizes over `q_range`.
pub fn synth_knots(kind: SynthKind, knot_count: usize, q_range: (f64, f64)) -> Result<Vec<(f64, f64)>, ExperimentError> {
    let (lo, hi) = q_range;
    if knot_count < 2 || !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
        return config_err("synth needs at least 2 knots and 0 < min < max");
    }
    let (a, b) = (lo.ln(), hi.ln());
    let knots: Vec<(f64, f64)> = (0..knot_count)
        .map(|i| {
            let q = if i == 0 {
                lo
            } else if i + 1 == knot_count {
                hi
            } else {
                (a + (b - a) * i as f64 / (knot_count - 1) as f64).exp()
            };
            (q, kind.eval(q))
        })
        .collect();
    if let Some(w) = knots.iter().find(|k| !k.1.is_finite()) {
        return Err(ExperimentError::NonMonotoneGenerator(format!("undefined at size {}", w.0)));
    }
    if let Some(w) = knots.windows(2).find(|w| w[1].1 < w[0].1) {
        return Err(ExperimentError::NonMonotoneGenerator(format!(
            "score drops from {} at {} to {} at {}",
            w[0].1, w[0].0, w[1].1, w[1].0
        )));
    }
    Ok(knots)
}

/// Write a synthetic curve file.
pub fn synth_curve(kind: SynthKind, knot_count: usize, q_range: (f64, f64), out: &Path) -> Result<(), ExperimentError> {
    let knots = synth_knots(kind, knot_count, q_range)?;
    let mut text = String::from("size,score\n");
    for (q, v) in knots {
        text.push_str(&format!("{q},{v}\n"));
    }
    fs::write(out, text).map_err(|e| io_err(out, e))
}

/// One cell of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub policy: PolicyKind,
    pub target: f64,
    pub horizon: usize,
    pub costs: Vec<f64>,
    pub penalty: f64,
    pub seed: u64,
}

/// Every cell, in report order.
pub fn cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>, ExperimentError> {
    let targets = cfg.target_list()?;
    let mut out = Vec::new();
    for &policy in &cfg.policies {
        for &target in &targets {
            for &horizon in &cfg.horizons {
                for costs in &cfg.costs {
                    for &penalty in &cfg.penalties {
                        for &seed in &cfg.seeds {
                            out.push(Cell {
                                policy,
                                target,
                                horizon,
                                costs: costs.clone(),
                                penalty,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Results of a sweep, in cell order.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub cells: Vec<Cell>,
    pub records: Vec<RunRecord>,
    /// Metrics per (policy, horizon).
    pub aggregates: Vec<(PolicyKind, usize, MetricsReport)>,
}

fn worker_count(cfg: &ExperimentConfig) -> Result<usize, ExperimentError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| ExperimentError::Config(format!("{WORKERS_ENV} must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(cfg.workers),
    }
}

/// Run every cell of the sweep without writing reports.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let oracle = cfg.validate()?;
    let cells = cells(cfg)?;
    let workers = worker_count(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("cannot start worker pool: {e}")))?;
    let policies: BTreeMap<PolicyKind, Policy> = cfg.policies.iter().map(|k| (*k, cfg.policy(*k))).collect();
    let sim = cfg.sim();
    let records: Vec<RunRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let spec = ProblemSpec {
                    target: cell.target,
                    costs: cell.costs.clone(),
                    penalty: cell.penalty,
                    horizon: cell.horizon,
                    q0: cfg.q0.clone(),
                    frozen_prefix: Vec::new(),
                };
                run_collection(&spec, &oracle, &policies[&cell.policy], &sim, cell.seed)
            })
            .collect()
    });
    let mut aggregates = Vec::new();
    for &policy in &cfg.policies {
        for &horizon in &cfg.horizons {
            let group: Vec<RunRecord> = cells
                .iter()
                .zip(&records)
                .filter(|(c, _)| c.policy == policy && c.horizon == horizon)
                .map(|(_, r)| r.clone())
                .collect();
            let m = aggregate_metrics(&group, cfg.trim_percentile).map_err(|e| ExperimentError::Config(e.to_string()))?;
            aggregates.push((policy, horizon, m));
        }
    }
    Ok(ExperimentOutcome {
        cells,
        records,
        aggregates,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-run report as CSV text.
pub fn runs_csv(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> String {
    let k = cfg.sources;
    let mut header: Vec<String> = ["policy", "target", "horizon"].map(String::from).to_vec();
    header.extend((1..=k).map(|j| format!("cost_{j}")));
    header.extend(["penalty", "seed", "met_target", "terminated_round"].map(String::from));
    header.extend((1..=k).map(|j| format!("q0_{j}")));
    header.extend((1..=k).map(|j| format!("q_final_{j}")));
    header.extend((1..=k).map(|j| format!("d_star_{j}")));
    header.extend(["total_paid", "cost_ratio", "points_ratio", "policy_error"].map(String::from));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for (cell, rec) in outcome.cells.iter().zip(&outcome.records) {
        let mut row: Vec<String> = vec![cell.policy.name().into(), cell.target.to_string(), cell.horizon.to_string()];
        row.extend(cell.costs.iter().map(f64::to_string));
        row.extend([
            cell.penalty.to_string(),
            cell.seed.to_string(),
            rec.met_target.to_string(),
            rec.terminated_round.to_string(),
        ]);
        row.extend(rec.spec.q0.iter().map(f64::to_string));
        row.extend(rec.final_amount().iter().map(f64::to_string));
        match &rec.d_star_true {
            Some(d) => row.extend(d.iter().map(f64::to_string)),
            None => row.extend((0..k).map(|_| String::new())),
        }
        row.extend([
            rec.total_paid.to_string(),
            opt(cost_ratio(rec)),
            opt(points_ratio(rec)),
            rec.policy_error.clone().unwrap_or_default(),
        ]);
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Aggregate report as CSV text.
pub fn aggregate_csv(outcome: &ExperimentOutcome) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "horizon",
        "runs",
        "failures",
        "failure_rate",
        "cost_ratio",
        "cost_ratio_runs",
        "points_ratio",
    ])
    .expect("in-memory write");
    for (policy, horizon, m) in &outcome.aggregates {
        w.write_record([
            policy.name().to_string(),
            horizon.to_string(),
            m.runs.to_string(),
            m.failures.to_string(),
            m.failure_rate.to_string(),
            opt(m.cost_ratio),
            m.cost_ratio_runs.to_string(),
            opt(m.points_ratio),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    policy: PolicyKind,
    horizon: usize,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

#[derive(Serialize)]
struct Summary<'a> {
    library: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    runs: usize,
    aggregates: Vec<AggregateRow<'a>>,
}

/// Structured summary as pretty-printed JSON.
pub fn summary_json(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> String {
    let summary = Summary {
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        runs: outcome.records.len(),
        aggregates: outcome
            .aggregates
            .iter()
            .map(|(policy, horizon, metrics)| AggregateRow {
                policy: *policy,
                horizon: *horizon,
                metrics,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
}

/// Run the sweep and write `runs.csv`, `aggregate.csv` and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let outcome = run_sweep(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, text) in [
        ("runs.csv", runs_csv(cfg, &outcome)),
        ("aggregate.csv", aggregate_csv(&outcome)),
        ("summary.json", summary_json(cfg, &outcome)),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(outcome)
}

//! Config-driven experiment runner: passage-time studies, the coupling and
//! Mermin–Wagner battery, and CSV/JSON persistence.
//!
//! Every trial draws its environment from a seed derived from
//! `(master_seed, tag…, n, trial)`, and results are collected in trial
//! order, so output does not depend on the thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coupling::checks::{coupling_battery, gaussian_shift_check, linspace};
use crate::coupling::{gaussian_halfline_holds, mw_report, CouplingError, MwReport, QuantileCoupling};
use crate::distributions::{DistributionError, WeightLaw};
use crate::estimators::{
    concentration_function, variance_estimate, EstimatorError, OmegaDiagnostic,
};
use crate::fpp::{tau_schedule, Environment, FppError, IncrementStudy, IncrementSummary, PassageSolver};
use crate::lattice::{annulus_edges, scales, GridBox};
use crate::report::{Check, CheckReport};
use crate::rng::RngStream;

pub const SCHEMA_VERSION: u32 = 1;

/// Columns of the per-n CSV table, in order.
pub const CSV_COLUMNS: [&str; 12] = [
    "n",
    "law",
    "samples",
    "w",
    "q_hat",
    "a_star",
    "stderr",
    "var",
    "var_stderr",
    "mean",
    "boundary_contact_rate",
    "tie_count",
];

// Seed-path tags keep the independent studies on disjoint streams.
const TAG_CHAIN: u64 = 0x6368_6169_6e;
const TAG_PILOT: u64 = 0x7069_6c6f_74;
const TAG_MW: u64 = 0x6d77;
const TAG_COUPLING: u64 = 0x636f_7570;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "box of radius {radius} needs about {required_mb} MiB per worker × {workers} workers, \
         above the {budget_mb} MiB budget"
    )]
    Memory {
        radius: u32,
        workers: usize,
        required_mb: u64,
        budget_mb: u64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Law(#[from] DistributionError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Fpp(#[from] FppError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl ExperimentError {
    /// Errors caused by user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Memory { .. }
                | ExperimentError::Parse { .. }
                | ExperimentError::Law(_)
        )
    }
}

fn default_law() -> WeightLaw {
    WeightLaw::Exponential { rate: 1.0 }
}

/// Experiment settings. TOML form: flat keys plus one `[law]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_law")]
    pub law: WeightLaw,
    pub n_grid: Vec<u64>,
    pub samples: usize,
    pub window: f64,
    /// Restriction radius R = radius_multiplier · n.
    pub radius_multiplier: u32,
    pub master_seed: u64,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub memory_budget_mb: u64,
    /// Trials per Monte Carlo case of the product-measure inequality.
    pub mw_trials: usize,
    pub increment_n: u64,
    pub increment_trials: usize,
    /// Base point s of the shifted increment comparison T_{s+r} − T_s.
    pub increment_shift: f64,
    /// Constant C of the shifted increment bound C·e^{−2^{k−1}}.
    pub increment_constant: f64,
    pub chain_n: u64,
    pub chain_samples: usize,
    /// Environments used only to place the window [a*, a*+w].
    pub chain_pilot: usize,
    /// The chain r-grid is `chain_r_points` evenly spaced values in [0, chain_r_max].
    pub chain_r_points: usize,
    pub chain_r_max: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            law: default_law(),
            n_grid: vec![16, 32, 64, 128],
            samples: 4000,
            window: 1.0,
            radius_multiplier: 4,
            master_seed: 20_240_917,
            threads: 0,
            out_dir: PathBuf::from("out"),
            memory_budget_mb: 4096,
            mw_trials: 100_000,
            increment_n: 32,
            increment_trials: 400,
            increment_shift: -1.0,
            increment_constant: 1.0,
            chain_n: 64,
            chain_samples: 2000,
            chain_pilot: 1000,
            chain_r_points: 8,
            chain_r_max: 1.0,
        }
    }
}

/// The fields that determine results; threads and paths are excluded.
#[derive(Serialize)]
struct HashView<'a> {
    law: &'a WeightLaw,
    n_grid: &'a [u64],
    samples: usize,
    window: f64,
    radius_multiplier: u32,
    master_seed: u64,
    mw_trials: usize,
    increment_n: u64,
    increment_trials: usize,
    increment_shift: f64,
    increment_constant: f64,
    chain_n: u64,
    chain_samples: usize,
    chain_pilot: usize,
    chain_r_points: usize,
    chain_r_max: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|source| ExperimentError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        self.law.validate()?;
        if !self.law.has_positive_support() {
            return bad(format!(
                "law {} does not have support in (0, ∞); passage times need positive weights",
                self.law.label()
            ));
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n < 16) {
            return bad(format!("n = {n} is below 16"));
        }
        if self.samples < 100 {
            return bad(format!("samples = {} is below 100", self.samples));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return bad(format!("window = {} must be positive", self.window));
        }
        if self.radius_multiplier < 2 {
            return bad(format!("radius_multiplier = {} is below 2", self.radius_multiplier));
        }
        let max_n = self.n_grid.iter().chain([&self.chain_n]).max().copied().unwrap_or(0);
        if max_n.saturating_mul(self.radius_multiplier as u64) > (1 << 28) {
            return bad(format!("radius {} × {} is out of range", self.radius_multiplier, max_n));
        }
        if self.chain_n < 16 || self.increment_n < 16 {
            return bad("chain_n and increment_n must be at least 16".into());
        }
        if self.chain_r_points < 2 || !(self.chain_r_max > 0.0 && self.chain_r_max <= 1.0) {
            return bad("need chain_r_points ≥ 2 and chain_r_max ∈ (0, 1]".into());
        }
        if self.chain_samples < 100 || self.chain_pilot < 100 {
            return bad("chain_samples and chain_pilot must be at least 100".into());
        }
        if self.mw_trials < 1000 {
            return bad(format!("mw_trials = {} is below 1000", self.mw_trials));
        }
        if !(-1.0..=0.0).contains(&self.increment_shift) || !(self.increment_constant > 0.0) {
            return bad("need increment_shift ∈ [−1, 0] and increment_constant > 0".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every result-relevant field.
    pub fn config_hash(&self) -> String {
        let view = HashView {
            law: &self.law,
            n_grid: &self.n_grid,
            samples: self.samples,
            window: self.window,
            radius_multiplier: self.radius_multiplier,
            master_seed: self.master_seed,
            mw_trials: self.mw_trials,
            increment_n: self.increment_n,
            increment_trials: self.increment_trials,
            increment_shift: self.increment_shift,
            increment_constant: self.increment_constant,
            chain_n: self.chain_n,
            chain_samples: self.chain_samples,
            chain_pilot: self.chain_pilot,
            chain_r_points: self.chain_r_points,
            chain_r_max: self.chain_r_max,
        };
        let bytes = serde_json::to_vec(&view).expect("config serialises");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn workers(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, ExperimentError> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers())
            .build()?)
    }

    fn preflight(&self, radius: u32) -> Result<(), ExperimentError> {
        let workers = self.workers();
        let per_worker = PassageSolver::footprint_bytes(radius);
        let required = per_worker.saturating_mul(workers as u64);
        if required > self.memory_budget_mb.saturating_mul(1 << 20) {
            return Err(ExperimentError::Memory {
                radius,
                workers,
                required_mb: per_worker.div_ceil(1 << 20),
                budget_mb: self.memory_budget_mb,
            });
        }
        Ok(())
    }
}

/// Parses `exp:1`, `uniform:1,3`, `gamma:2,1`, `lognormal:0,0.5` or `gaussian`.
pub fn parse_law_spec(spec: &str) -> Result<WeightLaw, ExperimentError> {
    let (family, args) = spec.split_once(':').unwrap_or((spec, ""));
    let nums = args
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ExperimentError::Config(format!("law `{spec}`: {e}")))?;
    let arity = |k: usize| {
        if nums.len() == k {
            Ok(())
        } else {
            Err(ExperimentError::Config(format!(
                "law `{spec}` takes {k} parameter(s), got {}",
                nums.len()
            )))
        }
    };
    Ok(match family.trim().to_ascii_lowercase().as_str() {
        "exp" | "exponential" => {
            if nums.is_empty() {
                WeightLaw::exponential(1.0)?
            } else {
                arity(1)?;
                WeightLaw::exponential(nums[0])?
            }
        }
        "uniform" => {
            arity(2)?;
            WeightLaw::uniform(nums[0], nums[1])?
        }
        "gamma" => {
            arity(2)?;
            WeightLaw::gamma(nums[0], nums[1])?
        }
        "lognormal" => {
            arity(2)?;
            WeightLaw::lognormal(nums[0], nums[1])?
        }
        "gaussian" | "normal" => {
            arity(0)?;
            WeightLaw::gaussian()
        }
        other => return Err(ExperimentError::Config(format!("unknown law family `{other}`"))),
    })
}

/// Exp(1), Uniform(1,3), Gamma(2,1) and LogNormal(0,0.5).
pub fn reference_laws() -> Vec<WeightLaw> {
    vec![
        WeightLaw::Exponential { rate: 1.0 },
        WeightLaw::Uniform { lo: 1.0, hi: 3.0 },
        WeightLaw::Gamma { shape: 2.0, scale: 1.0 },
        WeightLaw::LogNormal { mu: 0.0, sigma: 0.5 },
    ]
}

/// Statistics of T(0, (n, 0)) at one n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NRow {
    pub n: u64,
    pub law: String,
    pub samples: usize,
    pub w: f64,
    pub q_hat: f64,
    pub a_star: f64,
    pub stderr: f64,
    pub var: f64,
    pub var_stderr: f64,
    pub mean: f64,
    pub boundary_contact_rate: f64,
    pub tie_count: u64,
    pub mean_settled: f64,
    pub runtime_s: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    n: u64,
    law: &'a str,
    samples: usize,
    w: f64,
    q_hat: f64,
    a_star: f64,
    stderr: f64,
    var: f64,
    var_stderr: f64,
    mean: f64,
    boundary_contact_rate: f64,
    tie_count: u64,
}

impl<'a> From<&'a NRow> for CsvRow<'a> {
    fn from(r: &'a NRow) -> Self {
        CsvRow {
            n: r.n,
            law: &r.law,
            samples: r.samples,
            w: r.w,
            q_hat: r.q_hat,
            a_star: r.a_star,
            stderr: r.stderr,
            var: r.var,
            var_stderr: r.var_stderr,
            mean: r.mean,
            boundary_contact_rate: r.boundary_contact_rate,
            tie_count: r.tie_count,
        }
    }
}

/// Everything one command produced, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rows: Vec<NRow>,
    pub trend: Vec<Check>,
    pub omega: Option<OmegaDiagnostic>,
    pub battery: Option<BatteryReport>,
}

impl ResultRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.config_hash(),
            config: config.clone(),
            rows: Vec::new(),
            trend: Vec::new(),
            omega: None,
            battery: None,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.trend.iter().all(|c| c.pass)
            && self.battery.as_ref().is_none_or(|b| b.pass)
    }
}

struct Sample {
    time: f64,
    touched: bool,
    ties: u64,
    settled: u64,
}

/// Samples `trials` environments at scale n and returns T(0,(n,0)) per trial
/// in trial order.
fn sample_passage_times(
    coupling: &Arc<QuantileCoupling>,
    n: u64,
    radius: u32,
    trials: usize,
    seed_of: impl Fn(u64) -> u64 + Sync,
) -> Result<Vec<Sample>, ExperimentError> {
    let grid = GridBox::new(radius).map_err(FppError::from)?;
    let target = (n as i32, 0);
    (0..trials)
        .into_par_iter()
        .map_init(
            || PassageSolver::new(radius),
            |solver, trial| {
                let solver = solver.as_mut().map_err(|e| e.clone())?;
                let env = Environment::with_coupling(coupling.clone(), grid, seed_of(trial as u64))?;
                let res = solver.solve(&env, (0, 0), target)?;
                Ok(Sample {
                    time: res.time,
                    touched: res.touched_boundary,
                    ties: res.ties,
                    settled: res.settled,
                })
            },
        )
        .collect()
}

/// Monotone-trend checks across consecutive n: q̂ must not rise and the
/// variance must not fall by more than three combined standard errors, and
/// q̂ at the largest n must sit strictly below q̂ at the smallest.
pub fn trend_checks(rows: &[NRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        checks.push(Check::at_most(
            format!("q_hat_nonincreasing_{}_{}", a.n, b.n),
            b.q_hat - a.q_hat,
            3.0 * se,
        ));
        let vse = (a.var_stderr.powi(2) + b.var_stderr.powi(2)).sqrt();
        checks.push(Check::at_most(
            format!("variance_increasing_{}_{}", a.n, b.n),
            a.var - b.var,
            3.0 * vse,
        ));
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        if rows.len() > 1 {
            checks.push(Check::flag(
                format!("q_hat_{}_below_q_hat_{}", last.n, first.n),
                last.q_hat < first.q_hat,
                last.q_hat,
                first.q_hat,
            ));
        }
    }
    checks
}

/// The main study: q̂(n), Var T and diagnostics for each n in the grid.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRecord, ExperimentError> {
    config.validate()?;
    for &n in &config.n_grid {
        config.preflight(n as u32 * config.radius_multiplier)?;
    }
    let coupling = Arc::new(QuantileCoupling::new(config.law.clone())?);
    let pool = config.pool()?;
    let mut record = ResultRecord::new(config);
    let label = config.law.label();
    for &n in &config.n_grid {
        let start = Instant::now();
        let radius = n as u32 * config.radius_multiplier;
        let master = config.master_seed;
        let samples = pool.install(|| {
            sample_passage_times(&coupling, n, radius, config.samples, |t| {
                RngStream::derive_seed(master, &[n, t])
            })
        })?;
        let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
        let conc = concentration_function(&times, config.window)?;
        let var = variance_estimate(&times)?;
        let count = samples.len() as f64;
        record.rows.push(NRow {
            n,
            law: label.clone(),
            samples: samples.len(),
            w: config.window,
            q_hat: conc.q_hat,
            a_star: conc.a_star,
            stderr: conc.stderr,
            var: var.var,
            var_stderr: var.stderr,
            mean: var.mean,
            boundary_contact_rate: samples.iter().filter(|s| s.touched).count() as f64 / count,
            tie_count: samples.iter().map(|s| s.ties).sum(),
            mean_settled: samples.iter().map(|s| s.settled as f64).sum::<f64>() / count,
            runtime_s: start.elapsed().as_secs_f64(),
        });
    }
    record.trend = trend_checks(&record.rows);
    Ok(record)
}

/// Writes `results.csv` (one row per n) and `summary.json` into `dir`.
pub fn emit_outputs(record: &ResultRecord, dir: &Path) -> Result<(PathBuf, PathBuf), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");
    fs::write(&csv_path, csv_bytes(record)?).map_err(|source| ExperimentError::Io {
        path: csv_path.clone(),
        source,
    })?;
    let json = serde_json::to_string_pretty(record)?;
    fs::write(&json_path, json).map_err(|source| ExperimentError::Io {
        path: json_path.clone(),
        source,
    })?;
    Ok((csv_path, json_path))
}

/// The CSV table as bytes; the header is written even without rows.
pub fn csv_bytes(record: &ResultRecord) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for row in &record.rows {
        w.serialize(CsvRow::from(row))?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io {
        path: PathBuf::from("<csv buffer>"),
        source: e.into_error(),
    })
}

/// Structural check of a `summary.json` document against schema version 1.
pub fn validate_summary(doc: &serde_json::Value) -> Result<(), String> {
    use serde_json::Value;
    let obj = doc.as_object().ok_or("summary must be an object")?;
    let field = |name: &str| obj.get(name).ok_or_else(|| format!("missing `{name}`"));
    match field("schema_version")?.as_u64() {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        other => return Err(format!("unsupported schema_version {other:?}")),
    }
    let hash = field("config_hash")?.as_str().ok_or("config_hash must be a string")?;
    if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err("config_hash must be 64 hex digits".into());
    }
    field("crate_version")?.as_str().ok_or("crate_version must be a string")?;
    let config = field("config")?.as_object().ok_or("config must be an object")?;
    for key in ["law", "n_grid", "samples", "window", "master_seed"] {
        if !config.contains_key(key) {
            return Err(format!("config is missing `{key}`"));
        }
    }
    let rows = field("rows")?.as_array().ok_or("rows must be an array")?;
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_object().ok_or(format!("row {i} must be an object"))?;
        for col in CSV_COLUMNS.iter().chain(&["runtime_s"]) {
            match (row.get(*col), *col) {
                (Some(Value::String(_)), "law") => {}
                (Some(Value::Number(_)), c) if c != "law" => {}
                (Some(Value::Null), _) => {}
                _ => return Err(format!("row {i}: bad or missing `{col}`")),
            }
        }
    }
    for check in field("trend")?.as_array().ok_or("trend must be an array")? {
        if check.get("pass").and_then(Value::as_bool).is_none() {
            return Err("trend entries need a boolean `pass`".into());
        }
    }
    for key in ["omega", "battery"] {
        match obj.get(key) {
            Some(Value::Null) | Some(Value::Object(_)) => {}
            _ => return Err(format!("`{key}` must be null or an object")),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianGridReport {
    pub pairs: usize,
    pub violations: usize,
    pub pass: bool,
}

/// Φ(−a) ≤ e^{t²/2} √(Φ(t−a) Φ(−t−a)) on a 40 × 25 grid of (a, t) in
/// [−4, 4] × [−2, 2].
pub fn gaussian_grid_check() -> GaussianGridReport {
    let mut pairs = 0;
    let mut violations = 0;
    for a in linspace(-4.0, 4.0, 40) {
        for t in linspace(-2.0, 2.0, 25) {
            pairs += 1;
            violations += usize::from(!gaussian_halfline_holds(a, t));
        }
    }
    GaussianGridReport {
        pairs,
        violations,
        pass: violations == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwCase {
    pub law: String,
    pub event: String,
    pub report: MwReport,
}

/// Product-measure inequality on `{Σ xᵢ ≤ d·median}` with τᵢ = 0.3, for
/// d ∈ {1, 4, 16} and every reference law.
pub fn mw_monte_carlo(trials: usize, master_seed: u64) -> Result<Vec<MwCase>, ExperimentError> {
    let laws = reference_laws();
    let cases: Vec<(usize, usize)> = (0..laws.len())
        .flat_map(|l| [1usize, 4, 16].map(move |d| (l, d)))
        .collect();
    cases
        .par_iter()
        .map(|&(l, dim)| {
            let law = &laws[l];
            let c = QuantileCoupling::new(law.clone())?;
            let cut = dim as f64 * law.quantile(0.5)?;
            let mut stream = RngStream::derive(master_seed, &[TAG_MW, l as u64, dim as u64]);
            let report = c.mw_inequality_check(
                &vec![0.3; dim],
                |x| x.iter().sum::<f64>() <= cut,
                trials,
                &mut stream,
            )?;
            Ok(MwCase {
                law: law.label(),
                event: format!("sum <= {cut}"),
                report,
            })
        })
        .collect()
}

/// Coupling checks for the Gaussian law and each reference law.
pub fn coupling_reports(master_seed: u64) -> Result<Vec<CheckReport>, ExperimentError> {
    let gaussian = QuantileCoupling::new(WeightLaw::gaussian())?;
    let mut out = vec![CheckReport {
        law: gaussian.law().label(),
        checks: vec![gaussian_shift_check(
            &gaussian,
            &linspace(-4.0, 4.0, 64),
            &linspace(-1.0, 1.0, 64),
        )],
    }];
    let laws = reference_laws();
    let reports: Vec<CheckReport> = laws
        .par_iter()
        .enumerate()
        .map(|(i, law)| {
            let c = QuantileCoupling::new(law.clone())?;
            let mut stream = RngStream::derive(master_seed, &[TAG_COUPLING, i as u64]);
            Ok::<_, ExperimentError>(coupling_battery(&c, &mut stream))
        })
        .collect::<Result<_, _>>()?;
    out.extend(reports);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementBlock {
    pub law: String,
    pub n: u64,
    pub delta0: f64,
    pub summaries: Vec<IncrementSummary>,
    pub pass: bool,
}

/// Low-increment path frequencies at every scale k ≤ 4 present for
/// `increment_n`, with δ₀ calibrated at mass 0.999.
pub fn increment_block(config: &ExperimentConfig) -> Result<IncrementBlock, ExperimentError> {
    let coupling = QuantileCoupling::new(config.law.clone())?;
    let delta0 = coupling.estimate_delta0(0.999)?.delta0;
    let idx = scales(config.increment_n).map_err(FppError::from)?;
    let ks: Vec<u32> = (idx.k0..=idx.k1.min(crate::lattice::MAX_ENUMERATION_SCALE)).collect();
    let study = IncrementStudy {
        n: config.increment_n,
        ks,
        delta0,
        r: 1.0,
        s: config.increment_shift,
        shifted_constant: config.increment_constant,
        trials: config.increment_trials,
        master_seed: config.master_seed,
    };
    let summaries = study.run(&config.law)?;
    let pass = summaries.iter().all(|s| s.pass && s.shifted_pass);
    Ok(IncrementBlock {
        law: config.law.label(),
        n: config.increment_n,
        delta0,
        summaries,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub r: f64,
    /// ‖τ_r‖² from the annulus sizes.
    pub tau_norm_sq: f64,
    /// ‖τ_r‖² summed edge by edge.
    pub tau_norm_sq_direct: f64,
    pub lhs: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub n: u64,
    pub radius: u32,
    pub samples: usize,
    pub pilot: usize,
    pub w: f64,
    pub a_star: f64,
    pub rows: Vec<ChainRow>,
    pub pass: bool,
}

/// ‖τ_r‖² by summing τ(e)² over the edges of every annulus.
pub fn tau_norm_sq_direct(n: u64, r: f64) -> Result<f64, ExperimentError> {
    let sched = tau_schedule(n, r)?;
    // Neumaier summation: millions of equal terms drift by ~1e-10 otherwise.
    let (mut total, mut comp) = (0.0f64, 0.0f64);
    for k in sched.scales.k0..=sched.scales.k1 {
        for e in annulus_edges(k) {
            let x = sched.tau(e).powi(2);
            let t = total + x;
            comp += if total.abs() >= x.abs() { (total - t) + x } else { (x - t) + total };
            total = t;
        }
    }
    Ok(total + comp)
}

/// P(T ∈ W) against e^{‖τ_r‖²/2} √(P(T_r ∈ W) P(T_{−r} ∈ W)) with the
/// window W = [a*, a*+w] placed by an independent pilot sample, and all
/// three probabilities estimated on shared environments.
pub fn final_chain(config: &ExperimentConfig) -> Result<ChainReport, ExperimentError> {
    let n = config.chain_n;
    let radius = n as u32 * config.radius_multiplier;
    config.preflight(radius)?;
    let coupling = Arc::new(QuantileCoupling::new(config.law.clone())?);
    let master = config.master_seed;
    let pilot = sample_passage_times(&coupling, n, radius, config.chain_pilot, |t| {
        RngStream::derive_seed(master, &[TAG_PILOT, n, t])
    })?;
    let pilot_times: Vec<f64> = pilot.iter().map(|s| s.time).collect();
    let a_star = concentration_function(&pilot_times, config.window)?.a_star;
    let w = config.window;

    let rs = linspace(0.0, config.chain_r_max, config.chain_r_points);
    let mut signed: Vec<f64> = rs.iter().rev().filter(|&&r| r > 0.0).map(|r| -r).collect();
    signed.extend(&rs);
    let grid = GridBox::new(radius).map_err(FppError::from)?;
    let target = (n as i32, 0);
    // profiles[trial][j] = T_{signed[j]}
    let profiles: Vec<Vec<f64>> = (0..config.chain_samples)
        .into_par_iter()
        .map_init(
            || PassageSolver::new(radius),
            |solver, trial| {
                let solver = solver.as_mut().map_err(|e| e.clone())?;
                let seed = RngStream::derive_seed(master, &[TAG_CHAIN, n, trial as u64]);
                let env = Environment::with_coupling(coupling.clone(), grid, seed)?;
                Ok(solver
                    .profile(&env, n, &signed, (0, 0), target)?
                    .iter()
                    .map(|p| p.time)
                    .collect())
            },
        )
        .collect::<Result<_, ExperimentError>>()?;

    let m = profiles.len() as f64;
    let freq = |j: usize| {
        profiles
            .iter()
            .filter(|p| p[j] >= a_star && p[j] <= a_star + w)
            .count() as f64
            / m
    };
    let zero = signed.iter().position(|&r| r == 0.0).expect("grid holds 0");
    let lhs = freq(zero);
    let mut rows = Vec::new();
    for &r in &rs {
        let plus = signed.iter().position(|&x| x == r).expect("grid holds r");
        let minus = signed.iter().position(|&x| x == -r).expect("grid holds −r");
        let norm_sq = tau_schedule(n, r)?.norm_sq();
        let rep = mw_report(grid.edge_count() as usize, profiles.len(), norm_sq, lhs, freq(plus), freq(minus));
        rows.push(ChainRow {
            r,
            tau_norm_sq: norm_sq,
            tau_norm_sq_direct: tau_norm_sq_direct(n, r)?,
            lhs: rep.lhs,
            p_plus: rep.p_plus,
            p_minus: rep.p_minus,
            rhs: rep.rhs,
            stderr: rep.stderr,
            pass: rep.pass,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ChainReport {
        n,
        radius,
        samples: profiles.len(),
        pilot: pilot.len(),
        w,
        a_star,
        rows,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub coupling: Vec<CheckReport>,
    pub gaussian_grid: GaussianGridReport,
    pub mw: Vec<MwCase>,
    pub increments: IncrementBlock,
    pub chain: ChainReport,
    pub pass: bool,
}

/// Coupling checks, the product-measure battery, increment frequencies and
/// the final chain, on the configured thread pool.
pub fn run_mw_battery(config: &ExperimentConfig) -> Result<ResultRecord, ExperimentError> {
    config.validate()?;
    let pool = config.pool()?;
    let battery = pool.install(|| -> Result<BatteryReport, ExperimentError> {
        let coupling = coupling_reports(config.master_seed)?;
        let gaussian_grid = gaussian_grid_check();
        let mw = mw_monte_carlo(config.mw_trials, config.master_seed)?;
        let increments = increment_block(config)?;
        let chain = final_chain(config)?;
        let pass = coupling.iter().all(CheckReport::all_pass)
            && gaussian_grid.pass
            && mw.iter().all(|c| c.report.pass)
            && increments.pass
            && chain.pass;
        Ok(BatteryReport {
            coupling,
            gaussian_grid,
            mw,
            increments,
            chain,
            pass,
        })
    })?;
    let mut record = ResultRecord::new(config);
    record.battery = Some(battery);
    Ok(record)
}

//! Monte Carlo experiments for the change-point test.
//!
//! Every replication is a pure function of `(seed, replication)`, so results
//! do not depend on scheduling. All sweep cases of one replication share the
//! same noise (common random numbers), which keeps power curves smooth in the
//! effect size.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coords::{approx_coordinate, QuadraticVariation};
use crate::cpt::{kolmogorov_cdf, run_test, TestResult};
use crate::error::{Error, Result};
use crate::estimation::{self, two_d, OptimizerConfig};
use crate::model::{NoiseSpec, OperatorParams, SpaceTimeGrid, ThinningPlan, VolatilityProfile};
use crate::simulate::{assemble_field, simulate_coefficients, simulate_mode, InitialState, ModeSet, SimulationConfig};

/// Largest tolerated share of failed replications per case.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// Simulate the tested coordinate alone.
    Fast,
    /// Simulate the field, estimate, and rebuild the coordinate from the grid.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    A,
    B,
    /// Use the true `κ`.
    Oracle,
    #[serde(rename = "2d")]
    TwoD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaConvention {
    /// `β̂² = S_n`, the realized quadratic variation of the tested coordinate.
    TotalQv,
    /// `β̂² = γ_ℓ^{−α} V̂` with `V̂` from the fitted contrast.
    Regression,
    /// `β² = γ_ℓ^{−α} ∫σ²` from the true profile.
    Oracle,
}

/// Settings that only the full path needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullPathConfig {
    /// Spatial grid size `M` per axis.
    pub m_space: usize,
    /// Truncation `L` per axis.
    pub truncation: Vec<usize>,
    /// Thinning used by the estimators.
    pub estimation: ThinningPlan,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub value: f64,
    pub profile: VolatilityProfile,
}

impl SweepPoint {
    /// Constant `σ = 1`.
    pub fn situation1() -> Vec<SweepPoint> {
        vec![SweepPoint {
            label: "sigma=1".into(),
            value: 1.0,
            profile: VolatilityProfile::constant(1.0).expect("valid"),
        }]
    }

    /// Change at `τ = 0.5` from `σ₁ = 1` to each `σ₂`.
    pub fn situation2(sigma2: &[f64]) -> Result<Vec<SweepPoint>> {
        sigma2
            .iter()
            .map(|&s| {
                Ok(SweepPoint {
                    label: format!("sigma2={s}"),
                    value: s,
                    profile: VolatilityProfile::single_change(0.5, 1.0, s)?,
                })
            })
            .collect()
    }

    /// Change from `σ₁ = 1` to `σ₂ = 1.8` at each `τ`.
    pub fn situation3(tau: &[f64]) -> Result<Vec<SweepPoint>> {
        tau.iter()
            .map(|&t| {
                Ok(SweepPoint {
                    label: format!("tau={t}"),
                    value: t,
                    profile: VolatilityProfile::single_change(t, 1.0, 1.8)?,
                })
            })
            .collect()
    }
}

fn default_ell() -> Vec<usize> {
    vec![1]
}

fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub params: OperatorParams,
    pub noise: NoiseSpec,
    /// Used when `sweep` is empty.
    pub profile: VolatilityProfile,
    #[serde(default)]
    pub sweep: Vec<SweepPoint>,
    pub mode: PathMode,
    /// Simulation steps `N` on `[0, 1]`.
    pub n_time: usize,
    /// Test grids; each must divide `n_time`.
    pub n_values: Vec<usize>,
    #[serde(default = "default_ell")]
    pub ell: Vec<usize>,
    #[serde(default)]
    pub full: Option<FullPathConfig>,
    pub estimator: EstimatorChoice,
    pub beta: BetaConvention,
    #[serde(default = "default_level")]
    pub level: f64,
    pub replications: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Coordinate-level experiment on `θ = (0, 0.2, 0.2)` with cylindrical noise.
    pub fn fast(sweep: Vec<SweepPoint>, n_values: Vec<usize>, replications: usize, seed: u64) -> Self {
        let n_time = n_values.iter().copied().fold(1, lcm);
        Self {
            name: String::new(),
            params: OperatorParams::new_1d(0.0, 0.2, 0.2).expect("valid"),
            noise: NoiseSpec::cylindrical(),
            profile: VolatilityProfile::constant(1.0).expect("valid"),
            sweep,
            mode: PathMode::Fast,
            n_time,
            n_values,
            ell: default_ell(),
            full: None,
            estimator: EstimatorChoice::Oracle,
            beta: BetaConvention::TotalQv,
            level: 0.05,
            replications,
            seed,
        }
    }

    /// Field-level experiment at desk scale: `L = N = 2000`, `M = 500`, `m = 50`, `b = 0.05`.
    pub fn desk_full(sweep: Vec<SweepPoint>, n_values: Vec<usize>, replications: usize, seed: u64) -> Self {
        let n_time = 2000;
        Self {
            mode: PathMode::Full,
            n_time,
            full: Some(FullPathConfig {
                m_space: 500,
                truncation: vec![2000],
                estimation: ThinningPlan { b: 0.05, m: 50, n: n_time },
                optimizer: None,
            }),
            estimator: EstimatorChoice::B,
            beta: BetaConvention::Regression,
            ..Self::fast(sweep, n_values, replications, seed)
        }
    }

    pub fn cases(&self) -> Vec<SweepPoint> {
        if self.sweep.is_empty() {
            vec![SweepPoint {
                label: "base".into(),
                value: 0.0,
                profile: self.profile.clone(),
            }]
        } else {
            self.sweep.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.noise.validate(&self.params)?;
        let d = self.params.dim();
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if self.n_values.is_empty() {
            return bad("no test grid sizes given".into());
        }
        for &n in &self.n_values {
            if n < 2 || n > self.n_time || !self.n_time.is_multiple_of(n) {
                return bad(format!("test grid n = {n} must be ≥ 2 and divide N = {}", self.n_time));
            }
        }
        if self.ell.len() != d || self.ell.contains(&0) {
            return bad(format!("mode {:?} does not fit dimension {d}", self.ell));
        }
        match self.mode {
            PathMode::Fast => {
                if self.beta == BetaConvention::Regression {
                    return bad("the regression convention needs the full path".into());
                }
            }
            PathMode::Full => {
                let full = self
                    .full
                    .as_ref()
                    .ok_or_else(|| Error::Config("full path selected without its settings".into()))?;
                if full.truncation.len() != d {
                    return bad("truncation dimension does not match the operator".into());
                }
                if self.ell.iter().zip(&full.truncation).any(|(l, t)| l > t) {
                    return bad(format!("mode {:?} is outside the truncation", self.ell));
                }
                if self.beta == BetaConvention::Regression
                    && !matches!(self.estimator, EstimatorChoice::B | EstimatorChoice::TwoD)
                {
                    return bad("the regression convention needs Methodology B or the 2-D fit".into());
                }
                match (self.estimator, d) {
                    (EstimatorChoice::A | EstimatorChoice::B, 1) | (EstimatorChoice::TwoD, 2) => {}
                    (EstimatorChoice::Oracle, _) => {}
                    (e, _) => return bad(format!("estimator {e:?} does not apply in dimension {d}")),
                }
            }
        }
        for case in self.cases() {
            if case.profile.levels().iter().any(|s| s.is_nan() || *s <= 0.0) {
                return bad(format!("case {} has a non-positive volatility", case.label));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides, `key` being a dotted path into the JSON form.
    /// Values parse as JSON when possible and fall back to strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            let mut slot = &mut value;
            for part in key.split('.') {
                let obj = slot
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("override {key}: {part} is not inside an object")))?;
                slot = obj.entry(part.to_string()).or_insert(serde_json::Value::Null);
            }
            *slot = parsed;
        }
        Ok(serde_json::from_value(value)?)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub kappa_hat: Vec<f64>,
    pub theta2_hat: Option<f64>,
    pub v_hat: Option<f64>,
    pub v0_hat: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub objective_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub case: usize,
    pub replication: u64,
    /// One result per entry of `n_values`.
    pub results: Vec<TestResult>,
    pub estimate: EstimateRecord,
}

fn simulation(cfg: &ExperimentConfig, profile: &VolatilityProfile, modes: ModeSet, replication: u64) -> SimulationConfig {
    SimulationConfig {
        params: cfg.params.clone(),
        noise: cfg.noise,
        profile: profile.clone(),
        n_time: cfg.n_time,
        modes,
        seed: cfg.seed,
        replication,
        initial: InitialState::Zero,
    }
}

fn thinned_qv(path: &[f64], n_time: usize, n: usize) -> QuadraticVariation {
    let stride = n_time / n;
    let inc: Vec<f64> = (1..=n).map(|i| path[i * stride] - path[(i - 1) * stride]).collect();
    QuadraticVariation::from_increments(&inc)
}

fn estimate(cfg: &ExperimentConfig, full: &FullPathConfig, ds: &crate::dataset::FieldDataset) -> Result<EstimateRecord> {
    let plan = &full.estimation;
    let opt = |default: OptimizerConfig| full.optimizer.clone().unwrap_or(default);
    Ok(match cfg.estimator {
        EstimatorChoice::Oracle => EstimateRecord {
            kappa_hat: cfg.params.kappa(),
            ..Default::default()
        },
        EstimatorChoice::A => {
            let e = estimation::fit_methodology_a(ds, plan, &opt(estimation::methodology_a::default_box()))?;
            EstimateRecord {
                kappa_hat: vec![e.kappa_hat],
                v0_hat: Some(e.v0_hat),
                objective_value: Some(e.objective_value),
                ..Default::default()
            }
        }
        EstimatorChoice::B => {
            let e = estimation::fit_methodology_b(ds, plan, &opt(estimation::methodology_b::default_box()))?;
            EstimateRecord {
                kappa_hat: vec![e.kappa_hat],
                theta2_hat: Some(e.theta2_hat),
                v_hat: Some(e.v_hat),
                objective_value: Some(e.objective_value),
                ..Default::default()
            }
        }
        EstimatorChoice::TwoD => {
            let coarse = two_d::coarse_plan(plan)?;
            let alpha = estimation::estimate_alpha(ds, plan, &coarse)?;
            let stats = two_d::rectangle_stats(ds, plan, alpha)?;
            let e = two_d::fit_from_statistics(&stats, &opt(two_d::default_box(stats.r)), cfg.noise.gamma)?;
            EstimateRecord {
                kappa_hat: e.kappa_hat.to_vec(),
                theta2_hat: Some(e.theta2_hat),
                v_hat: Some(e.v_hat),
                alpha_hat: Some(e.alpha_hat),
                objective_value: Some(e.objective_value),
                ..Default::default()
            }
        }
    })
}

fn beta_sq(cfg: &ExperimentConfig, profile: &VolatilityProfile, qv: &QuadraticVariation, est: &EstimateRecord) -> Result<f64> {
    let amp = cfg.noise.amplitude(&cfg.ell, &cfg.params);
    match cfg.beta {
        BetaConvention::TotalQv => Ok(qv.total()),
        BetaConvention::Oracle => Ok(amp * amp * profile.integrated_variance()),
        BetaConvention::Regression => est
            .v_hat
            .map(|v| amp * amp * v)
            .ok_or_else(|| Error::Config("the chosen estimator provides no V̂".into())),
    }
}

/// One pass of the pipeline for sweep case `case`.
pub fn run_replication(cfg: &ExperimentConfig, case: usize, replication: u64) -> Result<ReplicationRecord> {
    let cases = cfg.cases();
    let point = cases
        .get(case)
        .ok_or_else(|| Error::IndexOutOfRange(format!("case {case} of {}", cases.len())))?;
    let profile = &point.profile;
    let finish = |qvs: Vec<QuadraticVariation>, estimate: EstimateRecord| -> Result<ReplicationRecord> {
        let results = qvs
            .iter()
            .map(|qv| run_test(qv, beta_sq(cfg, profile, qv, &estimate)?, cfg.level))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReplicationRecord {
            case,
            replication,
            results,
            estimate,
        })
    };
    match cfg.mode {
        PathMode::Fast => {
            let sim = simulation(cfg, profile, ModeSet::new(cfg.ell.clone())?, replication);
            let path = simulate_mode(&sim, &cfg.ell)?;
            let qvs = cfg.n_values.iter().map(|&n| thinned_qv(&path, cfg.n_time, n)).collect();
            finish(qvs, EstimateRecord::default())
        }
        PathMode::Full => {
            let full = cfg
                .full
                .as_ref()
                .ok_or_else(|| Error::Config("full path selected without its settings".into()))?;
            let sim = simulation(cfg, profile, ModeSet::new(full.truncation.clone())?, replication);
            let coeffs = simulate_coefficients(&sim)?;
            let grid = SpaceTimeGrid::new(cfg.n_time, vec![full.m_space; cfg.params.dim()])?;
            let ds = assemble_field(&coeffs, &grid)?;
            drop(coeffs);
            let est = estimate(cfg, full, &ds)?;
            let qvs = cfg
                .n_values
                .iter()
                .map(|&n| {
                    let plan = ThinningPlan::new(full.estimation.b, full.estimation.m, n)?;
                    let path = approx_coordinate(&ds, &cfg.ell, &est.kappa_hat, &plan)?;
                    Ok(QuadraticVariation::from_increments(&path.increments()))
                })
                .collect::<Result<Vec<_>>>()?;
            finish(qvs, est)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub label: String,
    pub value: f64,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub rejections: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn get(&self, label: &str, n: usize) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.label == label && r.n == n)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("power table", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<Vec<PowerRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSample {
    pub label: String,
    pub n: usize,
    pub replication: u64,
    pub t_n: f64,
    pub k_star: usize,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub label: String,
    pub replication: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub table: PowerTable,
    pub samples: Vec<TSample>,
    pub estimates: Vec<(String, u64, EstimateRecord)>,
    pub failures: Vec<FailureRecord>,
    pub wall_time_s: f64,
}

impl ExperimentResult {
    /// The `T_n` sample of one case and test grid, in replication order.
    pub fn t_values(&self, label: &str, n: usize) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.label == label && s.n == n)
            .map(|s| s.t_n)
            .collect()
    }
}

/// Folds replication outcomes, given in `(case, replication)` order, into a result.
fn aggregate(cfg: &ExperimentConfig, outcomes: Vec<(usize, u64, Result<ReplicationRecord>)>) -> Result<ExperimentResult> {
    let cases = cfg.cases();
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (c, point) in cases.iter().enumerate() {
        let mut rejections = vec![0usize; cfg.n_values.len()];
        let mut failed = 0;
        for (case, rep, outcome) in &outcomes {
            if *case != c {
                continue;
            }
            match outcome {
                Ok(rec) => {
                    for (k, res) in rec.results.iter().enumerate() {
                        rejections[k] += usize::from(res.reject);
                        samples.push(TSample {
                            label: point.label.clone(),
                            n: cfg.n_values[k],
                            replication: *rep,
                            t_n: res.t_n,
                            k_star: res.k_star,
                            p_value: res.p_value,
                            reject: res.reject,
                        });
                    }
                    estimates.push((point.label.clone(), *rep, rec.estimate.clone()));
                }
                Err(e) => {
                    failed += 1;
                    failures.push(FailureRecord {
                        label: point.label.clone(),
                        replication: *rep,
                        message: e.to_string(),
                    });
                }
            }
        }
        if failed as f64 > MAX_FAILURE_RATE * cfg.replications as f64 {
            if let Some(f) = failures.iter().find(|f| f.label == point.label) {
                log::error!("case {}: first failure: {}", point.label, f.message);
            }
            return Err(Error::Replications {
                failed,
                total: cfg.replications,
            });
        }
        let ok = cfg.replications - failed;
        for (k, &n) in cfg.n_values.iter().enumerate() {
            rows.push(PowerRow {
                label: point.label.clone(),
                value: point.value,
                n,
                replications: ok,
                failures: failed,
                rejections: rejections[k],
                power: if ok == 0 { 0.0 } else { rejections[k] as f64 / ok as f64 },
            });
        }
    }
    Ok(ExperimentResult {
        table: PowerTable { rows },
        samples,
        estimates,
        failures,
        wall_time_s: 0.0,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let n_cases = cfg.cases().len();
    let jobs: Vec<(usize, u64)> = (0..cfg.replications as u64)
        .flat_map(|r| (0..n_cases).map(move |c| (c, r)))
        .collect();
    let mut outcomes: Vec<_> = jobs
        .into_par_iter()
        .map(|(c, r)| (c, r, run_replication(cfg, c, r)))
        .collect();
    outcomes.sort_by_key(|(c, r, _)| (*c, *r));
    let mut result = aggregate(cfg, outcomes)?;
    for f in &result.failures {
        log::warn!("replication {} of case {} failed: {}", f.replication, f.label, f.message);
    }
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// `sup_x |F_n(x) − F(x)|` against the Kolmogorov distribution.
pub fn ks_distance(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = kolmogorov_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfRow {
    pub label: String,
    pub n: usize,
    pub t_n: f64,
    pub ecdf: f64,
    pub kolmogorov_cdf: f64,
}

pub fn ecdf_rows(result: &ExperimentResult, cfg: &ExperimentConfig) -> Vec<EcdfRow> {
    let mut rows = Vec::new();
    for case in cfg.cases() {
        for &n in &cfg.n_values {
            let mut t = result.t_values(&case.label, n);
            t.sort_by(f64::total_cmp);
            let len = t.len() as f64;
            rows.extend(t.iter().enumerate().map(|(i, &x)| EcdfRow {
                label: case.label.clone(),
                n,
                t_n: x,
                ecdf: (i + 1) as f64 / len,
                kolmogorov_cdf: kolmogorov_cdf(x),
            }));
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub wall_time_s: f64,
    pub failures: Vec<FailureRecord>,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `power.csv`, `t_samples.csv`, `ecdf.csv` and `manifest.json` into `out_dir`.
pub fn export_results(result: &ExperimentResult, cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(&dir.join("power.csv"), &result.table.rows)?;
    write_rows(&dir.join("t_samples.csv"), &result.samples)?;
    write_rows(&dir.join("ecdf.csv"), &ecdf_rows(result, cfg))?;
    let manifest = Manifest {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: result.wall_time_s,
        failures: result.failures.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

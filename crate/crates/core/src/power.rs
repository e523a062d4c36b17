//! Power diagnostics and Monte-Carlo rejection-rate simulations.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{check_hsic_size, hsic_test};
use crate::data::{JointSample, TestLocations};
use crate::error::{invalid, Error, Result};
use crate::kernels::GaussianKernel;
use crate::matrix::Matrix;
use crate::problems::ProblemSpec;
use crate::rng::{derive_seed, rng_from_seed};
use crate::statistic::{nfsic_statistic, solve_regularized, NfsicState, DEFAULT_GAMMA};
use crate::testing::{test_chi2, test_permutation, TestOutcome, ThresholdMethod};
use crate::tuning::{adaptive_test, random_normal_locations, TuningConfig};

/// Environment variable capping simulation parallelism.
pub const THREADS_ENV: &str = "NFSIC_THREADS";

// ---------------------------------------------------------------------------
// Test power lower bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBoundInputs {
    pub lambda_n: f64,
    pub r: f64,
    pub n: u64,
    pub j: usize,
    pub gamma_n: f64,
    pub b_k: f64,
    pub b_l: f64,
    /// Supremum of `||Sigma^{-1}||_F` over the kernel and location classes.
    pub c_tilde: f64,
}

impl PowerBoundInputs {
    /// Gaussian kernels (`B_k = B_l = 1`) and `c_tilde = 1`.
    pub fn gaussian(lambda_n: f64, r: f64, n: u64, j: usize, gamma_n: f64) -> Self {
        PowerBoundInputs {
            lambda_n,
            r,
            n,
            j,
            gamma_n,
            b_k: 1.0,
            b_l: 1.0,
            c_tilde: 1.0,
        }
    }
}

/// Constants derived from the kernel bounds, `J` and `c_tilde`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub b: f64,
    pub b_star: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi4: f64,
}

/// `B*`: the worst of the concentration constants, divided by `12^2`.
pub fn b_star(b_k: f64, b_l: f64) -> f64 {
    let b = b_k * b_l;
    let candidates = [
        2.0 * b.powi(4),
        8.0 * (b * b_k).max(b_l).powi(4),
        8.0 * (b * b_l).max(b_k).powi(4),
        18.0 * b.max(b_k).max(b_l).powi(6),
        18.0 * (b_k * b_k).max(b_l).powi(6),
        18.0 * b_k.max(b_l * b_l).powi(6),
        32.0 * 9.0 * b_k.max(b_l).powi(8),
    ];
    candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max) / 144.0
}

impl BoundConstants {
    pub fn new(j: usize, b_k: f64, b_l: f64, c_tilde: f64) -> Self {
        let jf = j as f64;
        let b = b_k * b_l;
        let b_star = b_star(b_k, b_l);
        let c1 = 4.0 * b * b * jf * jf.sqrt() * c_tilde;
        let c2 = 4.0 * b * jf.sqrt() * c_tilde;
        let c3 = 4.0 * b * b * jf * c_tilde * c_tilde;
        BoundConstants {
            b,
            b_star,
            c1,
            c2,
            c3,
            xi1: 1.0 / (9.0 * c1 * c1 * jf * jf * b_star),
            xi2: 72.0 * c2 * c2 * jf * b * b,
            xi3: 8.0 * c1 * b * b * jf,
            xi4: 256.0 * b.powi(4) * jf * jf * c1 * c1,
        }
    }
}

/// The three subtracted exponential terms of the bound.
pub fn power_bound_terms(inputs: &PowerBoundInputs) -> Result<[f64; 3]> {
    let p = inputs;
    if p.j == 0 || p.n < 2 {
        return Err(invalid("power bound needs J >= 1 and n >= 2"));
    }
    for (name, v) in [("gamma_n", p.gamma_n), ("B_k", p.b_k), ("B_l", p.b_l), ("c_tilde", p.c_tilde)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if !(p.lambda_n >= p.r) {
        return Err(Error::Domain(format!(
            "the bound holds only for lambda_n >= r (lambda_n = {}, r = {})",
            p.lambda_n, p.r
        )));
    }
    let c = BoundConstants::new(p.j, p.b_k, p.b_l, p.c_tilde);
    let n = p.n as f64;
    let d = p.lambda_n - p.r;
    let g = p.gamma_n;
    let t1 = 62.0 * (-c.xi1 * g * g * d * d / n).exp();
    let t2 = 2.0 * (-(0.5 * n).floor() * d * d / (c.xi2 * n * n)).exp();
    let inner = d * g * (n - 1.0) / 3.0 - c.xi3 * n - c.c3 * g * g * n * (n - 1.0);
    let t3 = 2.0 * (-inner * inner / (c.xi4 * n * n * (n - 1.0))).exp();
    Ok([t1, t2, t3])
}

/// Lower bound `L(lambda_n)` on `P(lambda_hat >= r)`. May be negative.
pub fn power_lower_bound(inputs: &PowerBoundInputs) -> Result<f64> {
    let [t1, t2, t3] = power_bound_terms(inputs)?;
    Ok(1.0 - t1 - t2 - t3)
}

/// Plug-in `||(Sigma_hat + gamma I)^{-1}||_F` for use as `c_tilde`.
pub fn estimate_c_tilde(state: &NfsicState) -> Result<f64> {
    let j = state.j();
    let mut fro = 0.0;
    for col in 0..j {
        let mut e = vec![0.0; j];
        e[col] = 1.0;
        let solved = solve_regularized(&state.sigma_hat, &e, state.gamma)?;
        fro += solved.s.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(fro.sqrt())
}

// ---------------------------------------------------------------------------
// Rejection-rate simulations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    /// Tuned on half the sample, tested on the other half.
    NfsicOpt,
    /// Full sample, median-heuristic widths, standard-normal locations.
    NfsicMed,
    /// Quadratic-time HSIC with a permutation threshold.
    Qhsic,
}

/// Which plan parameter the grid varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridParam {
    N,
    Omega,
    Dx,
    Dy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub problem: ProblemSpec,
    pub method: SimMethod,
    /// Sample size when the grid does not vary it.
    pub n: usize,
    pub grid_param: GridParam,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub alpha: f64,
    pub j: usize,
    pub master_seed: u64,
    pub gamma: f64,
    /// Threshold used by the NFSIC methods.
    pub threshold: ThresholdMethod,
    pub num_perms: usize,
    /// Tuning settings for `NfsicOpt`; the seed is replaced per trial.
    pub tuning: TuningConfig,
    pub allow_large_hsic: bool,
}

impl SimulationPlan {
    pub fn new(problem: ProblemSpec, method: SimMethod, n: usize, grid_param: GridParam, grid: Vec<f64>, trials: usize) -> Self {
        SimulationPlan {
            problem,
            method,
            n,
            grid_param,
            grid,
            trials,
            alpha: 0.05,
            j: 10,
            master_seed: 0,
            gamma: DEFAULT_GAMMA,
            threshold: ThresholdMethod::Chi2,
            num_perms: 300,
            tuning: TuningConfig::default(),
            allow_large_hsic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.grid.is_empty() {
            return Err(invalid("the parameter grid is empty"));
        }
        if self.j == 0 {
            return Err(invalid("J must be at least 1"));
        }
        crate::testing::check_alpha(self.alpha)?;
        for &g in &self.grid {
            let (problem, n) = self.setting(g)?;
            problem.validate()?;
            if self.method == SimMethod::Qhsic {
                check_hsic_size(n, self.allow_large_hsic)?;
            }
        }
        Ok(())
    }

    /// Problem and sample size at one grid value.
    pub fn setting(&self, value: f64) -> Result<(ProblemSpec, usize)> {
        let mut p = self.problem;
        let mut n = self.n;
        let as_count = |v: f64, what: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(invalid(format!("grid value {v} is not a valid {what}")))
            }
        };
        match self.grid_param {
            GridParam::N => n = as_count(value, "sample size")?,
            GridParam::Omega => p.omega = value,
            GridParam::Dx => p.dx = as_count(value, "dimension")?,
            GridParam::Dy => p.dy = as_count(value, "dimension")?,
        }
        Ok((p, n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub grid_index: usize,
    pub grid_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub reject: Option<bool>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub grid_value: f64,
    pub trials: usize,
    pub rejections: usize,
    pub failures: usize,
    pub rate: f64,
    pub mean_runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub rows: Vec<RateRow>,
    pub records: Vec<TrialRecord>,
}

/// Runs `f` on a pool sized by `NFSIC_THREADS` (default: machine parallelism).
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Median-heuristic kernels for both sides.
pub fn median_kernels(sample: &JointSample) -> Result<(GaussianKernel, GaussianKernel)> {
    Ok((
        GaussianKernel::from_median_heuristic(sample.xs())?,
        GaussianKernel::from_median_heuristic(sample.ys())?,
    ))
}

fn nfsic_fixed(sample: &JointSample, locs: &TestLocations, plan_gamma: f64, threshold: ThresholdMethod, alpha: f64, num_perms: usize, seed: u64) -> Result<TestOutcome> {
    let (kx, ky) = median_kernels(sample)?;
    match threshold {
        ThresholdMethod::Chi2 => test_chi2(&nfsic_statistic(sample, &kx, &ky, locs, plan_gamma)?, alpha),
        ThresholdMethod::Permutation => test_permutation(sample, &kx, &ky, locs, plan_gamma, alpha, num_perms, seed),
    }
}

/// One end-to-end test of `method` on a fresh sample.
pub fn run_trial(plan: &SimulationPlan, problem: &ProblemSpec, n: usize, seed: u64) -> Result<TestOutcome> {
    let sample = problem.sample(n, derive_seed(seed, &[0]))?;
    let method_seed = derive_seed(seed, &[1]);
    match plan.method {
        SimMethod::NfsicOpt => {
            let cfg = TuningConfig {
                seed: method_seed,
                gamma: plan.gamma,
                threshold: plan.threshold,
                num_perms: plan.num_perms,
                ..plan.tuning.clone()
            };
            adaptive_test(&sample, plan.j, plan.alpha, &cfg)
        }
        SimMethod::NfsicMed => {
            let mut rng = rng_from_seed(method_seed);
            let locs = random_normal_locations(plan.j, sample.dx(), sample.dy(), &mut rng)?;
            nfsic_fixed(&sample, &locs, plan.gamma, plan.threshold, plan.alpha, plan.num_perms, derive_seed(seed, &[2]))
        }
        SimMethod::Qhsic => {
            check_hsic_size(n, plan.allow_large_hsic)?;
            let (kx, ky) = median_kernels(&sample)?;
            hsic_test(&sample, &kx, &ky, plan.alpha, plan.num_perms, derive_seed(seed, &[2]))
        }
    }
}

fn record(grid_index: usize, grid_value: f64, trial: usize, seed: u64, f: impl FnOnce() -> Result<TestOutcome>) -> TrialRecord {
    let start = Instant::now();
    let out = f();
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    match out {
        Ok(o) => TrialRecord {
            grid_index,
            grid_value,
            trial,
            seed,
            reject: Some(o.reject),
            statistic: Some(o.statistic),
            p_value: Some(o.p_value),
            runtime_ms,
            error: None,
        },
        Err(e) => TrialRecord {
            grid_index,
            grid_value,
            trial,
            seed,
            reject: None,
            statistic: None,
            p_value: None,
            runtime_ms,
            error: Some(e.to_string()),
        },
    }
}

/// Aggregates per-trial records into one row per grid value.
///
/// Failed trials are excluded from the denominator; more than 1% failures
/// at any grid value is an error.
pub fn aggregate(grid: &[f64], trials: usize, records: &[TrialRecord]) -> Result<Vec<RateRow>> {
    grid.iter()
        .enumerate()
        .map(|(gi, &gv)| {
            let recs: Vec<&TrialRecord> = records.iter().filter(|r| r.grid_index == gi).collect();
            let failures = recs.iter().filter(|r| r.error.is_some()).count();
            if failures * 100 > trials {
                return Err(Error::TooManyFailures { failed: failures, trials });
            }
            let rejections = recs.iter().filter(|r| r.reject == Some(true)).count();
            let ok = trials - failures;
            let mean_runtime_ms = recs.iter().map(|r| r.runtime_ms).sum::<f64>() / recs.len().max(1) as f64;
            Ok(RateRow {
                grid_value: gv,
                trials,
                rejections,
                failures,
                rate: if ok > 0 { rejections as f64 / ok as f64 } else { 0.0 },
                mean_runtime_ms,
            })
        })
        .collect()
}

fn trial_seed(master: u64, grid_index: usize, trial: usize) -> u64 {
    derive_seed(master, &[grid_index as u64, trial as u64])
}

/// Fraction of `plan.trials` independent tests rejecting at each grid value.
pub fn simulate_rejection_rate(plan: &SimulationPlan) -> Result<SimulationResult> {
    plan.validate()?;
    let jobs: Vec<(usize, usize)> = (0..plan.grid.len())
        .flat_map(|g| (0..plan.trials).map(move |t| (g, t)))
        .collect();
    let records: Vec<TrialRecord> = with_thread_pool(|| {
        jobs.par_iter()
            .map(|&(gi, t)| {
                let gv = plan.grid[gi];
                let seed = trial_seed(plan.master_seed, gi, t);
                record(gi, gv, t, seed, || {
                    let (problem, n) = plan.setting(gv)?;
                    run_trial(plan, &problem, n, seed)
                })
            })
            .collect()
    });
    let rows = aggregate(&plan.grid, plan.trials, &records)?;
    Ok(SimulationResult { rows, records })
}

/// Locations drawn uniformly from `(-pi, pi)^(dx + dy)`.
pub fn uniform_box_locations(j: usize, dx: usize, dy: usize, rng: &mut impl Rng) -> Result<TestLocations> {
    use std::f64::consts::PI;
    let vs = Matrix::from_vec(j, dx, (0..j * dx).map(|_| rng.random_range(-PI..PI)).collect())?;
    let ws = Matrix::from_vec(j, dy, (0..j * dy).map(|_| rng.random_range(-PI..PI)).collect())?;
    TestLocations::new(vs, ws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub problem: ProblemSpec,
    pub j_grid: Vec<usize>,
    pub n: usize,
    pub trials: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub master_seed: u64,
}

/// Power of the untuned test with uniformly random locations, per `J`.
pub fn power_vs_j_sweep(cfg: &SweepConfig) -> Result<SimulationResult> {
    cfg.problem.validate()?;
    if cfg.problem.dx != 1 || cfg.problem.dy != 1 {
        return Err(invalid("the J sweep expects a one-dimensional problem (dx = dy = 1)"));
    }
    if cfg.j_grid.is_empty() || cfg.j_grid.contains(&0) {
        return Err(invalid("J grid must be non-empty with every J >= 1"));
    }
    if cfg.trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    crate::testing::check_alpha(cfg.alpha)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.j_grid.len())
        .flat_map(|g| (0..cfg.trials).map(move |t| (g, t)))
        .collect();
    let records: Vec<TrialRecord> = with_thread_pool(|| {
        jobs.par_iter()
            .map(|&(gi, t)| {
                let j = cfg.j_grid[gi];
                let seed = trial_seed(cfg.master_seed, gi, t);
                record(gi, j as f64, t, seed, || {
                    let sample = cfg.problem.sample(cfg.n, derive_seed(seed, &[0]))?;
                    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
                    let locs = uniform_box_locations(j, 1, 1, &mut rng)?;
                    nfsic_fixed(&sample, &locs, cfg.gamma, ThresholdMethod::Chi2, cfg.alpha, 0, 0)
                })
            })
            .collect()
    });
    let grid: Vec<f64> = cfg.j_grid.iter().map(|&j| j as f64).collect();
    let rows = aggregate(&grid, cfg.trials, &records)?;
    Ok(SimulationResult { rows, records })
}

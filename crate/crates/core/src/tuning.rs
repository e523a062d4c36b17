//! Held-out parameter tuning: kernel widths and test locations are chosen by
//! gradient ascent on the statistic computed over a training split, and the
//! test is run on the disjoint remainder.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{JointSample, TestLocations};
use crate::error::{invalid, Result};
use crate::kernels::{median_heuristic, sq_dist, GaussianKernel};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed};
use crate::statistic::{
    compute_kl, nfsic_statistic, solve_regularized, u_hat, u_hat_biased, sigma_hat,
    DEFAULT_GAMMA,
};
use crate::testing::{check_alpha, test_chi2, test_permutation, TestOutcome, ThresholdMethod, TunedSummary};

/// Standard deviation of the jitter added to initial locations.
const INIT_JITTER_SD: f64 = 1e-2;
/// Backtracking halvings tried before a step is rejected.
const MAX_HALVINGS: usize = 10;
/// Relative improvement below which ascent stops.
const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub train_fraction: f64,
    pub max_iters: usize,
    /// Step length on the gradient scaled to unit infinity-norm.
    pub step_size: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Width bounds as multiples of the squared median-heuristic width.
    pub width_bounds: (f64, f64),
    pub threshold: ThresholdMethod,
    pub num_perms: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            train_fraction: 0.5,
            max_iters: 200,
            step_size: 0.1,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            width_bounds: (1e-4, 1e4),
            threshold: ThresholdMethod::Chi2,
            num_perms: 300,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid("step_size must be positive"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid("gamma must be nonnegative"));
        }
        let (lo, hi) = self.width_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(invalid(format!(
                "width bounds must satisfy 0 < lower < upper, got ({lo}, {hi})"
            )));
        }
        if self.threshold == ThresholdMethod::Permutation && self.num_perms == 0 {
            return Err(invalid("num_perms must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub kernel_x: GaussianKernel,
    pub kernel_y: GaussianKernel,
    pub locations: TestLocations,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<f64>,
}

impl TunedParams {
    pub fn summary(&self) -> TunedSummary {
        TunedSummary {
            sigma2_x: self.kernel_x.width_sq(),
            sigma2_y: self.kernel_y.width_sq(),
            locations: self.locations.clone(),
        }
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Seeded disjoint split into `floor(n * train_fraction)` training rows and the rest.
pub fn split(sample: &JointSample, train_fraction: f64, seed: u64) -> Result<(JointSample, JointSample)> {
    let n = sample.n();
    if n < 4 {
        return Err(invalid(format!("splitting needs n >= 4, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let (train_idx, test_idx) = split_indices(n, train_fraction, seed);
    if train_idx.len() < 2 || test_idx.len() < 2 {
        return Err(invalid(format!(
            "split of n = {n} at fraction {train_fraction} leaves a part with fewer than 2 rows"
        )));
    }
    Ok((sample.select(&train_idx)?, sample.select(&test_idx)?))
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_train = (n as f64 * train_fraction).floor() as usize;
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Closed interval for a log-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBounds {
    pub lo: f64,
    pub hi: f64,
}

impl LogBounds {
    pub fn around(median_sq: f64, rel: (f64, f64)) -> Self {
        LogBounds {
            lo: (median_sq * rel.0).ln(),
            hi: (median_sq * rel.1).ln(),
        }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    fn contains_interior(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

/// The tuning objective on a fixed training sample.
///
/// Parameters are packed as `[ln sx2, ln sy2, v_1..v_J, w_1..w_J]` with each
/// location row-major.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    train: &'a JointSample,
    j: usize,
    gamma: f64,
    bounds_x: LogBounds,
    bounds_y: LogBounds,
}

impl<'a> Objective<'a> {
    pub fn new(train: &'a JointSample, j: usize, gamma: f64, bounds_x: LogBounds, bounds_y: LogBounds) -> Result<Self> {
        if j == 0 {
            return Err(invalid("J must be at least 1"));
        }
        if !(bounds_x.lo < bounds_x.hi) || !(bounds_y.lo < bounds_y.hi) {
            return Err(invalid("log-width bounds must satisfy lower < upper"));
        }
        Ok(Objective {
            train,
            j,
            gamma,
            bounds_x,
            bounds_y,
        })
    }

    pub fn dim(&self) -> usize {
        2 + self.j * (self.train.dx() + self.train.dy())
    }

    pub fn pack(&self, kx: &GaussianKernel, ky: &GaussianKernel, locs: &TestLocations) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dim());
        p.push(kx.width_sq().ln());
        p.push(ky.width_sq().ln());
        p.extend_from_slice(locs.vs().as_slice());
        p.extend_from_slice(locs.ws().as_slice());
        p
    }

    pub fn decode(&self, params: &[f64]) -> Result<(GaussianKernel, GaussianKernel, TestLocations)> {
        if params.len() != self.dim() {
            return Err(invalid(format!(
                "parameter vector has length {}, expected {}",
                params.len(),
                self.dim()
            )));
        }
        let (dx, dy, j) = (self.train.dx(), self.train.dy(), self.j);
        let kx = GaussianKernel::new(self.bounds_x.clamp(params[0]).exp())?;
        let ky = GaussianKernel::new(self.bounds_y.clamp(params[1]).exp())?;
        let v_end = 2 + j * dx;
        let vs = Matrix::from_vec(j, dx, params[2..v_end].to_vec())?;
        let ws = Matrix::from_vec(j, dy, params[v_end..].to_vec())?;
        Ok((kx, ky, TestLocations::new(vs, ws)?))
    }

    /// Statistic on the training sample; `-inf` when it cannot be evaluated.
    pub fn value(&self, params: &[f64]) -> f64 {
        self.try_value(params).unwrap_or(f64::NEG_INFINITY)
    }

    fn try_value(&self, params: &[f64]) -> Result<f64> {
        let (kx, ky, locs) = self.decode(params)?;
        let st = nfsic_statistic(self.train, &kx, &ky, &locs, self.gamma)?;
        Ok(if st.lambda_hat.is_finite() { st.lambda_hat } else { f64::NEG_INFINITY })
    }

    /// Objective and its exact gradient.
    pub fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (kx, ky, locs) = self.decode(params)?;
        let (k, l) = compute_kl(self.train, &kx, &ky, &locs)?;
        let (j, n) = (k.rows(), k.cols());
        let nf = n as f64;

        let u = u_hat(&k, &l)?;
        let ub = u_hat_biased(&k, &l)?;
        let sigma = sigma_hat(&k, &l, &ub)?;
        let solve = solve_regularized(&sigma, &u, self.gamma)?;
        let s = solve.s;
        let value = (nf * u.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()).max(0.0);

        // Centered features and g = Gamma^T s.
        let center = |m: &Matrix| {
            let mut c = m.clone();
            for i in 0..j {
                let row = c.row_mut(i);
                let mean = row.iter().sum::<f64>() / nf;
                row.iter_mut().for_each(|v| *v -= mean);
            }
            c
        };
        let kc = center(&k);
        let lc = center(&l);
        let mut g = vec![0.0; n];
        for i in 0..j {
            let (kr, lr) = (kc.row(i), lc.row(i));
            let si = s[i];
            for m in 0..n {
                g[m] += si * (kr[m] * lr[m] - ub[i]);
            }
        }

        // Adjoints of the statistic with respect to K and L entries.
        let mut grad_k = Matrix::zeros(j, n);
        let mut grad_l = Matrix::zeros(j, n);
        let a = nf / (nf - 1.0);
        for i in 0..j {
            let (kr, lr) = (kc.row(i), lc.row(i));
            let c_l = lr.iter().zip(&g).map(|(p, q)| p * q).sum::<f64>() / nf;
            let c_k = kr.iter().zip(&g).map(|(p, q)| p * q).sum::<f64>() / nf;
            let two_s = 2.0 * s[i];
            let gk = grad_k.row_mut(i);
            for m in 0..n {
                gk[m] = two_s * (a * lr[m] - g[m] * lr[m] + c_l);
            }
            let gl = grad_l.row_mut(i);
            for m in 0..n {
                gl[m] = two_s * (a * kr[m] - g[m] * kr[m] + c_k);
            }
        }

        let mut grad = vec![0.0; self.dim()];
        let (dx, dy) = (self.train.dx(), self.train.dy());
        let (dwx, dvs) = chain_to_params(&grad_k, &k, self.train.xs(), locs.vs(), kx.width_sq());
        let (dwy, dws) = chain_to_params(&grad_l, &l, self.train.ys(), locs.ws(), ky.width_sq());
        grad[0] = if self.bounds_x.contains_interior(params[0]) { dwx } else { 0.0 };
        grad[1] = if self.bounds_y.contains_interior(params[1]) { dwy } else { 0.0 };
        let v_end = 2 + j * dx;
        grad[2..v_end].copy_from_slice(&dvs);
        grad[v_end..v_end + j * dy].copy_from_slice(&dws);
        Ok((value, grad))
    }
}

/// Pulls the adjoint of a feature matrix back to its log-width and locations.
fn chain_to_params(adj: &Matrix, feat: &Matrix, points: &Matrix, locs: &Matrix, width_sq: f64) -> (f64, Vec<f64>) {
    let (j, n) = (feat.rows(), feat.cols());
    let d = points.cols();
    let mut d_width = 0.0;
    let mut d_locs = vec![0.0; j * d];
    for i in 0..j {
        let v = locs.row(i);
        let (ar, fr) = (adj.row(i), feat.row(i));
        let dl = &mut d_locs[i * d..(i + 1) * d];
        for m in 0..n {
            let w = ar[m] * fr[m];
            if w == 0.0 {
                continue;
            }
            let x = points.row(m);
            d_width += w * sq_dist(x, v) / (2.0 * width_sq);
            for c in 0..d {
                dl[c] += w * (x[c] - v[c]) / width_sq;
            }
        }
    }
    (d_width, d_locs)
}

/// Tuning objective for a flat parameter vector.
pub fn objective(train: &JointSample, j: usize, params: &[f64], gamma: f64, bounds_x: LogBounds, bounds_y: LogBounds) -> Result<f64> {
    Ok(Objective::new(train, j, gamma, bounds_x, bounds_y)?.value(params))
}

/// Median-heuristic widths, seeded jittered training pairs as locations.
pub fn initial_params(train: &JointSample, j: usize, config: &TuningConfig) -> Result<(GaussianKernel, GaussianKernel, TestLocations, LogBounds, LogBounds)> {
    if j == 0 {
        return Err(invalid("J must be at least 1"));
    }
    if j > train.n() {
        return Err(invalid(format!(
            "J = {j} exceeds the {} training rows",
            train.n()
        )));
    }
    let mx = median_heuristic(train.xs())?;
    let my = median_heuristic(train.ys())?;
    let kx = GaussianKernel::new(mx * mx)?;
    let ky = GaussianKernel::new(my * my)?;
    let bx = LogBounds::around(mx * mx, config.width_bounds);
    let by = LogBounds::around(my * my, config.width_bounds);

    let mut rng = rng_from_seed(derive_seed(config.seed, &[1]));
    let idx = sample_indices(&mut rng, train.n(), j).into_vec();
    let jitter = Normal::new(0.0, INIT_JITTER_SD).expect("valid sd");
    let mut vs = train.xs().select_rows(&idx);
    let mut ws = train.ys().select_rows(&idx);
    for v in vs.as_mut_slice().iter_mut().chain(ws.as_mut_slice().iter_mut()) {
        *v += jitter.sample(&mut rng);
    }
    Ok((kx, ky, TestLocations::new(vs, ws)?, bx, by))
}

/// Gradient ascent with backtracking from the seeded initialization.
pub fn optimize(train: &JointSample, j: usize, config: &TuningConfig) -> Result<TunedParams> {
    config.validate()?;
    let (kx, ky, locs, bx, by) = initial_params(train, j, config)?;
    let obj = Objective::new(train, j, config.gamma, bx, by)?;
    let mut params = obj.pack(&kx, &ky, &locs);
    let mut current = obj.value(&params);
    let mut trace = vec![current];

    for _ in 0..config.max_iters {
        let grad = match obj.value_and_gradient(&params) {
            Ok((_, g)) => g,
            Err(_) => break,
        };
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(scale > 0.0) || !scale.is_finite() {
            break;
        }
        let mut step = config.step_size / scale;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut cand: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
            cand[0] = bx.clamp(cand[0]);
            cand[1] = by.clamp(cand[1]);
            let val = obj.value(&cand);
            if val > current && cand.iter().all(|v| v.is_finite()) {
                accepted = Some((cand, val));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, val)) = accepted else { break };
        let improvement = if current.is_finite() && current != 0.0 {
            (val - current) / current.abs()
        } else {
            f64::INFINITY
        };
        params = cand;
        current = val;
        trace.push(current);
        if improvement < REL_TOL {
            break;
        }
    }

    let (kernel_x, kernel_y, locations) = obj.decode(&params)?;
    Ok(TunedParams {
        kernel_x,
        kernel_y,
        locations,
        objective_trace: trace,
    })
}

/// Best of `restarts` independently seeded optimizations.
pub fn optimize_with_restarts(train: &JointSample, j: usize, config: &TuningConfig, restarts: usize) -> Result<TunedParams> {
    let restarts = restarts.max(1);
    let mut best: Option<TunedParams> = None;
    for r in 0..restarts {
        let cfg = TuningConfig {
            seed: if r == 0 { config.seed } else { derive_seed(config.seed, &[100, r as u64]) },
            ..config.clone()
        };
        let tuned = optimize(train, j, &cfg)?;
        if best.as_ref().is_none_or(|b| tuned.final_objective() > b.final_objective()) {
            best = Some(tuned);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Split, tune on the training part, test on the held-out part.
pub fn adaptive_test(sample: &JointSample, j: usize, alpha: f64, config: &TuningConfig) -> Result<TestOutcome> {
    adaptive_test_with_restarts(sample, j, alpha, config, 1)
}

pub fn adaptive_test_with_restarts(
    sample: &JointSample,
    j: usize,
    alpha: f64,
    config: &TuningConfig,
    restarts: usize,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    config.validate()?;
    let (train, test) = split(sample, config.train_fraction, derive_seed(config.seed, &[0]))?;
    let tuned = optimize_with_restarts(&train, j, config, restarts)?;
    let mut outcome = match config.threshold {
        ThresholdMethod::Chi2 => {
            let st = nfsic_statistic(&test, &tuned.kernel_x, &tuned.kernel_y, &tuned.locations, config.gamma)?;
            test_chi2(&st, alpha)?
        }
        ThresholdMethod::Permutation => test_permutation(
            &test,
            &tuned.kernel_x,
            &tuned.kernel_y,
            &tuned.locations,
            config.gamma,
            alpha,
            config.num_perms,
            derive_seed(config.seed, &[2]),
        )?,
    };
    outcome.tuned_params = Some(tuned.summary());
    Ok(outcome)
}

/// `J` locations with each coordinate drawn from `N(0, 1)`.
pub fn random_normal_locations(j: usize, dx: usize, dy: usize, rng: &mut impl Rng) -> Result<TestLocations> {
    let std = Normal::new(0.0, 1.0).expect("valid");
    let vs = Matrix::from_vec(j, dx, (0..j * dx).map(|_| std.sample(rng)).collect())?;
    let ws = Matrix::from_vec(j, dy, (0..j * dy).map(|_| std.sample(rng)).collect())?;
    TestLocations::new(vs, ws)
}

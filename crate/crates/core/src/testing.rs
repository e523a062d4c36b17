//! Test decisions: asymptotic chi-squared and permutation thresholds.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chi2::{chi2_quantile, chi2_sf};
use crate::data::{JointSample, TestLocations};
use crate::error::{invalid, Result};
use crate::kernels::GaussianKernel;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed};
use crate::statistic::{compute_kl, nfsic_from_kl, NfsicState};

/// How the rejection threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    Chi2,
    Permutation,
}

/// Parameters chosen on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedSummary {
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub locations: TestLocations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub method: ThresholdMethod,
    pub alpha: f64,
    pub num_perms: Option<usize>,
    pub tuned_params: Option<TunedSummary>,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Compares the statistic with the `(1 - alpha)`-quantile of `chi2(J)`.
pub fn test_chi2(state: &NfsicState, alpha: f64) -> Result<TestOutcome> {
    chi2_outcome(state.lambda_hat, state.j(), alpha)
}

pub fn chi2_outcome(statistic: f64, j: usize, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let threshold = chi2_quantile(j, 1.0 - alpha)?;
    let p_value = chi2_sf(j, statistic.max(0.0))?;
    Ok(TestOutcome {
        statistic,
        threshold,
        p_value,
        reject: statistic >= threshold,
        method: ThresholdMethod::Chi2,
        alpha,
        num_perms: None,
        tuned_params: None,
    })
}

/// Decision from an observed statistic and its permutation replicates.
///
/// The threshold is the order statistic at 1-based rank
/// `ceil((1 - alpha) * P)`; the p-value is `(1 + #{perm >= obs}) / (1 + P)`.
pub fn permutation_outcome(observed: f64, permuted: &[f64], alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if permuted.is_empty() {
        return Err(invalid("at least one permutation is required"));
    }
    let p = permuted.len();
    let mut sorted = permuted.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (((1.0 - alpha) * p as f64) - 1e-9).ceil().clamp(1.0, p as f64) as usize;
    let threshold = sorted[rank - 1];
    let exceed = permuted.iter().filter(|&&s| s >= observed).count();
    Ok(TestOutcome {
        statistic: observed,
        threshold,
        p_value: (1 + exceed) as f64 / (1 + p) as f64,
        reject: observed >= threshold,
        method: ThresholdMethod::Permutation,
        alpha,
        num_perms: Some(p),
        tuned_params: None,
    })
}

/// Uniform random permutation of `0..n` for permutation index `index`.
pub(crate) fn permutation_for(seed: u64, index: usize, n: usize) -> Vec<usize> {
    let mut rng = rng_from_seed(derive_seed(seed, &[index as u64]));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

fn permute_columns(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let src = m.row(i);
        for (dst, &p) in out.row_mut(i).iter_mut().zip(perm) {
            *dst = src[p];
        }
    }
    out
}

/// Statistics of `num_perms` samples with the y rows independently permuted.
///
/// `K` depends only on x and is reused; permuting the y rows permutes the
/// columns of `L`, so no kernel is re-evaluated.
pub fn permuted_statistics(
    k: &Matrix,
    l: &Matrix,
    gamma: f64,
    num_perms: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..num_perms)
        .into_par_iter()
        .map(|b| {
            let perm = permutation_for(seed, b, l.cols());
            let lp = permute_columns(l, &perm);
            nfsic_from_kl(k, &lp, gamma).map(|s| s.lambda_hat)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn test_permutation(
    sample: &JointSample,
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    locs: &TestLocations,
    gamma: f64,
    alpha: f64,
    num_perms: usize,
    seed: u64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if num_perms == 0 {
        return Err(invalid("num_perms must be at least 1"));
    }
    let (k, l) = compute_kl(sample, kx, ky, locs)?;
    let observed = nfsic_from_kl(&k, &l, gamma)?.lambda_hat;
    let permuted = permuted_statistics(&k, &l, gamma, num_perms, seed)?;
    permutation_outcome(observed, &permuted, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::sample_sg;
    use crate::statistic::DEFAULT_GAMMA;

    fn state_with(lambda: f64, j: usize) -> NfsicState {
        NfsicState {
            n: 100,
            u_hat: vec![0.0; j],
            sigma_hat: Matrix::zeros(j, j),
            gamma: DEFAULT_GAMMA,
            gamma_requested: DEFAULT_GAMMA,
            gamma_adjusted: false,
            lambda_hat: lambda,
        }
    }

    #[test]
    fn chi2_zero_statistic() {
        let out = test_chi2(&state_with(0.0, 3), 0.05).unwrap();
        assert_eq!(out.p_value, 1.0);
        assert!(!out.reject);
    }

    #[test]
    fn chi2_boundary_rejects() {
        let t = chi2_quantile(4, 0.95).unwrap();
        let out = test_chi2(&state_with(t, 4), 0.05).unwrap();
        assert!(out.reject);
        assert!((out.p_value - 0.05).abs() < 1e-8);
    }

    #[test]
    fn chi2_j10_rejects_25() {
        let out = test_chi2(&state_with(25.0, 10), 0.05).unwrap();
        assert!(out.reject);
        assert!(out.threshold > 18.307 && out.threshold < 18.308);
        assert!(out.p_value <= 0.05);
    }

    #[test]
    fn alpha_is_validated() {
        assert!(test_chi2(&state_with(1.0, 1), 0.0).is_err());
        assert!(test_chi2(&state_with(1.0, 1), 1.0).is_err());
    }

    #[test]
    fn degenerate_permutation_distribution() {
        let out = permutation_outcome(2.5, &[2.5; 50], 0.05).unwrap();
        assert_eq!(out.p_value, 1.0);
        assert_eq!(out.threshold, 2.5);
    }

    #[test]
    fn observed_above_all_permutations() {
        let perms: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let out = permutation_outcome(1e6, &perms, 0.05).unwrap();
        assert_eq!(out.p_value, 1.0 / 301.0);
        assert!(out.reject);
        // rank ceil(0.95 * 300) = 285 (1-based)
        assert_eq!(out.threshold, 284.0);
    }

    #[test]
    fn permutation_p_value_bounds() {
        let perms: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        for obs in [-2.0, 0.0, 0.3, 2.0] {
            let out = permutation_outcome(obs, &perms, 0.1).unwrap();
            assert!(out.p_value >= 1.0 / 21.0 && out.p_value <= 1.0);
            assert_eq!(out.reject, obs >= out.threshold);
        }
    }

    #[test]
    fn permutation_test_reproducible() {
        let sample = sample_sg(200, 2, 2, 4).unwrap();
        let kx = GaussianKernel::from_median_heuristic(sample.xs()).unwrap();
        let ky = GaussianKernel::from_median_heuristic(sample.ys()).unwrap();
        let locs = TestLocations::from_rows(&[[0.0, 0.0], [1.0, -1.0]], &[[0.5, 0.0], [0.0, 1.0]]).unwrap();
        let a = test_permutation(&sample, &kx, &ky, &locs, DEFAULT_GAMMA, 0.05, 50, 9).unwrap();
        let b = test_permutation(&sample, &kx, &ky, &locs, DEFAULT_GAMMA, 0.05, 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(test_permutation(&sample, &kx, &ky, &locs, DEFAULT_GAMMA, 0.05, 0, 9).is_err());
    }

    #[test]
    fn permuted_columns_equal_recomputed_kernels() {
        let sample = sample_sg(30, 1, 2, 5).unwrap();
        let kx = GaussianKernel::new(1.0).unwrap();
        let ky = GaussianKernel::new(1.5).unwrap();
        let locs = TestLocations::from_rows(&[[0.0], [1.0]], &[[0.5, 0.0], [0.0, 1.0]]).unwrap();
        let (k, l) = compute_kl(&sample, &kx, &ky, &locs).unwrap();
        let stats = permuted_statistics(&k, &l, DEFAULT_GAMMA, 3, 77).unwrap();
        for (b, s) in stats.iter().enumerate() {
            let perm = permutation_for(77, b, 30);
            let permuted = sample.with_permuted_y(&perm).unwrap();
            let direct = crate::statistic::nfsic_statistic(&permuted, &kx, &ky, &locs, DEFAULT_GAMMA).unwrap();
            assert!((direct.lambda_hat - s).abs() <= 1e-12 * s.max(1e-12));
        }
    }

    #[test]
    fn permutation_null_calibration() {
        let trials = 300;
        let mut rejections = 0;
        for t in 0..trials {
            let sample = sample_sg(300, 1, 1, derive_seed(1234, &[t])).unwrap();
            let kx = GaussianKernel::from_median_heuristic(sample.xs()).unwrap();
            let ky = GaussianKernel::from_median_heuristic(sample.ys()).unwrap();
            let locs = TestLocations::from_rows(&[[0.0], [1.0], [-1.0]], &[[0.0], [-0.5], [0.8]]).unwrap();
            let out = test_permutation(&sample, &kx, &ky, &locs, DEFAULT_GAMMA, 0.05, 300, t).unwrap();
            rejections += out.reject as usize;
        }
        let rate = rejections as f64 / trials as f64;
        assert!((rate - 0.05).abs() <= 0.03, "rate {rate}");
    }
}

//! Quadratic-time HSIC with a permutation threshold.
//!
//! Cost is `O(n^2)` time and memory; [`HSIC_MAX_N`] guards the harness.

use rayon::prelude::*;

use crate::data::JointSample;
use crate::error::{invalid, Result};
use crate::kernels::GaussianKernel;
use crate::matrix::Matrix;
use crate::testing::{check_alpha, permutation_for, permutation_outcome, TestOutcome};

/// Largest sample the simulation harness and CLI accept without an override.
pub const HSIC_MAX_N: usize = 20_000;

pub fn check_hsic_size(n: usize, allow_large: bool) -> Result<()> {
    if n > HSIC_MAX_N && !allow_large {
        return Err(invalid(format!(
            "quadratic-time HSIC refuses n = {n} > {HSIC_MAX_N} without an explicit override"
        )));
    }
    Ok(())
}

/// Full `n x n` Gram matrix.
pub fn gram(kernel: &GaussianKernel, points: &Matrix) -> Matrix {
    let n = points.rows();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        g.set(i, i, 1.0);
        for j in (i + 1)..n {
            let v = kernel.eval_unchecked(points.row(i), points.row(j));
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// `H K H` with `H = I - 11^T / n`.
pub fn double_center(k: &Matrix) -> Matrix {
    let n = k.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let total = row_means.iter().sum::<f64>() / nf;
    let mut c = k.clone();
    for i in 0..n {
        let ri = row_means[i];
        for (j, v) in c.row_mut(i).iter_mut().enumerate() {
            *v += total - ri - row_means[j];
        }
    }
    c
}

fn check_sample(sample: &JointSample) -> Result<()> {
    if sample.n() < 4 {
        return Err(invalid(format!("HSIC needs n >= 4, got {}", sample.n())));
    }
    Ok(())
}

/// `(1/n^2) sum_ij Kc_ij L_perm(i) perm(j)`; identity when `perm` is `None`.
fn centered_inner(kc: &Matrix, l: &Matrix, perm: Option<&[usize]>) -> f64 {
    let n = kc.rows();
    let mut acc = 0.0;
    match perm {
        None => {
            for i in 0..n {
                acc += kc.row(i).iter().zip(l.row(i)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Some(p) => {
            for i in 0..n {
                let lr = l.row(p[i]);
                let kr = kc.row(i);
                let mut s = 0.0;
                for j in 0..n {
                    s += kr[j] * lr[p[j]];
                }
                acc += s;
            }
        }
    }
    acc / (n as f64 * n as f64)
}

/// Biased (V-statistic) HSIC estimate `trace(Kc Lc) / n^2`.
pub fn hsic_statistic(sample: &JointSample, kx: &GaussianKernel, ky: &GaussianKernel) -> Result<f64> {
    check_sample(sample)?;
    let kc = double_center(&gram(kx, sample.xs()));
    let l = gram(ky, sample.ys());
    Ok(centered_inner(&kc, &l, None).max(0.0))
}

/// HSIC with a threshold from `num_perms` permutations of the y rows.
pub fn hsic_test(
    sample: &JointSample,
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    alpha: f64,
    num_perms: usize,
    seed: u64,
) -> Result<TestOutcome> {
    check_sample(sample)?;
    check_alpha(alpha)?;
    if num_perms == 0 {
        return Err(invalid("num_perms must be at least 1"));
    }
    let kc = double_center(&gram(kx, sample.xs()));
    let l = gram(ky, sample.ys());
    let observed = centered_inner(&kc, &l, None).max(0.0);
    let n = sample.n();
    let permuted: Vec<f64> = (0..num_perms)
        .into_par_iter()
        .map(|b| {
            let perm = permutation_for(seed, b, n);
            centered_inner(&kc, &l, Some(&perm)).max(0.0)
        })
        .collect();
    permutation_outcome(observed, &permuted, alpha)
}

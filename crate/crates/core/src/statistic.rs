//! Linear-time dependence statistics at a finite set of test locations.
//!
//! With `K[i][m] = k(v_i, x_m)` and `L[i][m] = l(w_i, y_m)` (both `J x n`):
//!
//! ```text
//! u     = (K o L) 1 / (n-1) - (K 1) o (L 1) / (n (n-1))
//! u_b   = (K o L) 1 / n     - (K 1) o (L 1) / n^2
//! Gamma = (K - mean_row K) o (L - mean_row L) - u_b 1^T
//! Sigma = Gamma Gamma^T / n
//! lambda = n u^T (Sigma + gamma I)^{-1} u
//! ```
//!
//! Total cost is `O(J^3 + J^2 n + (dx + dy) J n)`.

use serde::{Deserialize, Serialize};

use crate::data::{JointSample, TestLocations};
use crate::error::{invalid, Error, Result};
use crate::kernels::GaussianKernel;
use crate::matrix::{Cholesky, Matrix};

/// Default ridge added to the covariance estimate.
pub const DEFAULT_GAMMA: f64 = 1e-8;

/// The statistic and the pieces it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfsicState {
    pub n: usize,
    pub u_hat: Vec<f64>,
    pub sigma_hat: Matrix,
    /// Ridge actually used; differs from `gamma_requested` after a fallback.
    pub gamma: f64,
    pub gamma_requested: f64,
    pub gamma_adjusted: bool,
    pub lambda_hat: f64,
}

impl NfsicState {
    pub fn j(&self) -> usize {
        self.u_hat.len()
    }
}

/// `J x n` matrix of kernel values between `locations` (rows) and `points` (columns).
pub fn kernel_matrix(kernel: &GaussianKernel, points: &Matrix, locations: &Matrix) -> Result<Matrix> {
    if points.cols() != locations.cols() {
        return Err(Error::DimensionMismatch {
            expected: points.cols(),
            found: locations.cols(),
        });
    }
    let n = points.rows();
    let j = locations.rows();
    let mut out = Matrix::zeros(j, n);
    for i in 0..j {
        let v = locations.row(i);
        let row = out.row_mut(i);
        for (m, slot) in row.iter_mut().enumerate() {
            *slot = kernel.eval_unchecked(points.row(m), v);
        }
    }
    Ok(out)
}

/// The `K` and `L` feature matrices for a sample.
pub fn compute_kl(
    sample: &JointSample,
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    locs: &TestLocations,
) -> Result<(Matrix, Matrix)> {
    locs.check_compatible(sample)?;
    Ok((
        kernel_matrix(kx, sample.xs(), locs.vs())?,
        kernel_matrix(ky, sample.ys(), locs.ws())?,
    ))
}

fn check_kl(k: &Matrix, l: &Matrix) -> Result<()> {
    if k.rows() != l.rows() || k.cols() != l.cols() {
        return Err(invalid(format!(
            "K is {}x{} but L is {}x{}",
            k.rows(),
            k.cols(),
            l.rows(),
            l.cols()
        )));
    }
    Ok(())
}

struct RowSums {
    k: Vec<f64>,
    l: Vec<f64>,
    kl: Vec<f64>,
}

fn row_sums(k: &Matrix, l: &Matrix) -> RowSums {
    let j = k.rows();
    let mut sums = RowSums {
        k: vec![0.0; j],
        l: vec![0.0; j],
        kl: vec![0.0; j],
    };
    for i in 0..j {
        let (kr, lr) = (k.row(i), l.row(i));
        let (mut sk, mut sl, mut skl) = (0.0, 0.0, 0.0);
        for (a, b) in kr.iter().zip(lr) {
            sk += a;
            sl += b;
            skl += a * b;
        }
        sums.k[i] = sk;
        sums.l[i] = sl;
        sums.kl[i] = skl;
    }
    sums
}

/// Unbiased (U-statistic) estimate of `u` at each location.
pub fn u_hat(k: &Matrix, l: &Matrix) -> Result<Vec<f64>> {
    check_kl(k, l)?;
    let n = k.cols();
    if n < 2 {
        return Err(invalid(format!("u_hat needs n >= 2, got {n}")));
    }
    let s = row_sums(k, l);
    let nf = n as f64;
    Ok((0..k.rows())
        .map(|i| s.kl[i] / (nf - 1.0) - s.k[i] * s.l[i] / (nf * (nf - 1.0)))
        .collect())
}

/// Biased (V-statistic) estimate of `u` at each location.
pub fn u_hat_biased(k: &Matrix, l: &Matrix) -> Result<Vec<f64>> {
    check_kl(k, l)?;
    let n = k.cols();
    if n < 1 {
        return Err(invalid("u_hat_biased needs n >= 1"));
    }
    let s = row_sums(k, l);
    let nf = n as f64;
    Ok((0..k.rows())
        .map(|i| s.kl[i] / nf - s.k[i] * s.l[i] / (nf * nf))
        .collect())
}

/// `Gamma` of the covariance estimate: centered feature products minus `u_b`.
fn gamma_matrix(k: &Matrix, l: &Matrix, u_b: &[f64]) -> Matrix {
    let (j, n) = (k.rows(), k.cols());
    let nf = n as f64;
    let mut g = Matrix::zeros(j, n);
    for i in 0..j {
        let (kr, lr) = (k.row(i), l.row(i));
        let km = kr.iter().sum::<f64>() / nf;
        let lm = lr.iter().sum::<f64>() / nf;
        let ub = u_b[i];
        for (m, slot) in g.row_mut(i).iter_mut().enumerate() {
            *slot = (kr[m] - km) * (lr[m] - lm) - ub;
        }
    }
    g
}

fn gram_over_n(g: &Matrix) -> Matrix {
    let (j, n) = (g.rows(), g.cols());
    let nf = n as f64;
    let mut s = Matrix::zeros(j, j);
    for a in 0..j {
        let ra = g.row(a);
        for b in a..j {
            let v: f64 = ra.iter().zip(g.row(b)).map(|(p, q)| p * q).sum::<f64>() / nf;
            s.set(a, b, v);
            s.set(b, a, v);
        }
    }
    s
}

/// Covariance estimate `Gamma Gamma^T / n`.
pub fn sigma_hat(k: &Matrix, l: &Matrix, u_b: &[f64]) -> Result<Matrix> {
    check_kl(k, l)?;
    if k.cols() < 2 {
        return Err(invalid(format!("sigma_hat needs n >= 2, got {}", k.cols())));
    }
    if u_b.len() != k.rows() {
        return Err(Error::DimensionMismatch {
            expected: k.rows(),
            found: u_b.len(),
        });
    }
    Ok(gram_over_n(&gamma_matrix(k, l, u_b)))
}

/// Solution of `(sigma + gamma I) s = u`, with one ridge fallback.
pub(crate) struct RegularizedSolve {
    pub s: Vec<f64>,
    pub gamma: f64,
    pub adjusted: bool,
}

pub(crate) fn fallback_gamma(gamma: f64) -> f64 {
    gamma.max(1e-6) * 10.0
}

pub(crate) fn solve_regularized(sigma: &Matrix, u: &[f64], gamma: f64) -> Result<RegularizedSolve> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid(format!("gamma must be nonnegative, got {gamma}")));
    }
    let ridge = |g: f64| {
        let mut a = sigma.clone();
        for i in 0..a.rows() {
            a.set(i, i, a.get(i, i) + g);
        }
        a
    };
    if let Some(ch) = Cholesky::new(&ridge(gamma)) {
        return Ok(RegularizedSolve {
            s: ch.solve(u)?,
            gamma,
            adjusted: false,
        });
    }
    let g2 = fallback_gamma(gamma);
    match Cholesky::new(&ridge(g2)) {
        Some(ch) => Ok(RegularizedSolve {
            s: ch.solve(u)?,
            gamma: g2,
            adjusted: true,
        }),
        None => Err(Error::SingularCovariance { gamma: g2 }),
    }
}

/// Full statistic from precomputed feature matrices.
pub fn nfsic_from_kl(k: &Matrix, l: &Matrix, gamma: f64) -> Result<NfsicState> {
    let u = u_hat(k, l)?;
    let ub = u_hat_biased(k, l)?;
    let sigma = sigma_hat(k, l, &ub)?;
    let solve = solve_regularized(&sigma, &u, gamma)?;
    let n = k.cols();
    let quad: f64 = u.iter().zip(&solve.s).map(|(a, b)| a * b).sum();
    Ok(NfsicState {
        n,
        u_hat: u,
        sigma_hat: sigma,
        gamma: solve.gamma,
        gamma_requested: gamma,
        gamma_adjusted: solve.adjusted,
        lambda_hat: (n as f64 * quad).max(0.0),
    })
}

/// Normalized statistic `n u^T (Sigma + gamma I)^{-1} u`.
pub fn nfsic_statistic(
    sample: &JointSample,
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    locs: &TestLocations,
    gamma: f64,
) -> Result<NfsicState> {
    let (k, l) = compute_kl(sample, kx, ky, locs)?;
    nfsic_from_kl(&k, &l, gamma)
}

/// Unnormalized statistic `(1/J) u^T u`.
pub fn fsic_statistic(
    sample: &JointSample,
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    locs: &TestLocations,
) -> Result<f64> {
    let (k, l) = compute_kl(sample, kx, ky, locs)?;
    let u = u_hat(&k, &l)?;
    Ok(u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64)
}

/// Scalar fields of the single-location statistic at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessPoint {
    pub mu_xy_hat: f64,
    pub mu_x_mu_y_hat: f64,
    pub sigma_hat: f64,
    pub lambda_hat: f64,
}

/// Evaluates the `J = 1` statistic at every location in `grid`.
pub fn witness_surface(
    sample: &JointSample,
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    grid: &TestLocations,
    gamma: f64,
) -> Result<Vec<WitnessPoint>> {
    if grid.is_empty() {
        return Err(invalid("witness grid is empty"));
    }
    let (k, l) = compute_kl(sample, kx, ky, grid)?;
    let n = sample.n() as f64;
    let s = row_sums(&k, &l);
    let ub = u_hat_biased(&k, &l)?;
    let g = gamma_matrix(&k, &l, &ub);
    (0..grid.len())
        .map(|i| {
            let mu_xy = s.kl[i] / n;
            let mu_prod = (s.k[i] * s.l[i] - s.kl[i]) / (n * (n - 1.0));
            let u = mu_xy - mu_prod;
            let var = g.row(i).iter().map(|v| v * v).sum::<f64>() / n;
            let sigma = Matrix::from_vec(1, 1, vec![var])?;
            let solve = solve_regularized(&sigma, &[u], gamma)?;
            Ok(WitnessPoint {
                mu_xy_hat: mu_xy,
                mu_x_mu_y_hat: mu_prod,
                sigma_hat: var,
                lambda_hat: (n * u * solve.s[0]).max(0.0),
            })
        })
        .collect()
}

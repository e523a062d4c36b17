//! Isotropic Gaussian kernels and the median-heuristic width.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

/// Largest point count for which the median heuristic is computed over all
/// pairs. Larger inputs are uniformly subsampled to this size.
pub const MEDIAN_SUBSAMPLE_CAP: usize = 5000;

/// Seed used for the median-heuristic subsample when none is given.
pub const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;

/// `k(x, v) = exp(-||x - v||^2 / (2 * width_sq))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    width_sq: f64,
}

impl GaussianKernel {
    pub fn new(width_sq: f64) -> Result<Self> {
        if !(width_sq > 0.0) || !width_sq.is_finite() {
            return Err(invalid(format!(
                "kernel width must be positive and finite, got {width_sq}"
            )));
        }
        Ok(GaussianKernel { width_sq })
    }

    /// Kernel whose width is the median pairwise distance of `points`.
    pub fn from_median_heuristic(points: &Matrix) -> Result<Self> {
        let m = median_heuristic(points)?;
        GaussianKernel::new(m * m)
    }

    #[inline]
    pub fn width_sq(&self) -> f64 {
        self.width_sq
    }

    pub fn eval(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: v.len(),
            });
        }
        Ok(self.eval_unchecked(x, v))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], v: &[f64]) -> f64 {
        (-sq_dist(x, v) / (2.0 * self.width_sq)).exp()
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Median of all pairwise Euclidean distances between the rows of `points`.
///
/// Inputs with more than [`MEDIAN_SUBSAMPLE_CAP`] rows are subsampled with
/// the fixed seed [`MEDIAN_SUBSAMPLE_SEED`].
pub fn median_heuristic(points: &Matrix) -> Result<f64> {
    median_heuristic_with(points, MEDIAN_SUBSAMPLE_CAP, MEDIAN_SUBSAMPLE_SEED)
}

pub fn median_heuristic_with(points: &Matrix, cap: usize, seed: u64) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(invalid(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    if cap < 2 {
        return Err(invalid("subsample cap must be at least 2"));
    }
    let subset;
    let pts = if n > cap {
        let mut rng = rng_from_seed(seed);
        let mut idx = sample_indices(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        subset = points.select_rows(&idx);
        &subset
    } else {
        points
    };

    let m = pts.rows();
    let mut d2 = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        let xi = pts.row(i);
        for j in (i + 1)..m {
            d2.push(sq_dist(xi, pts.row(j)));
        }
    }
    if d2.iter().all(|&d| d == 0.0) {
        return Err(Error::Degenerate(
            "all pairwise distances are zero".to_string(),
        ));
    }
    let med = median_of_sq_distances(&mut d2);
    if med <= 0.0 {
        return Err(Error::Degenerate(
            "median pairwise distance is zero (more than half the pairs coincide)".to_string(),
        ));
    }
    Ok(med)
}

/// Median of `sqrt(d2)`; averages the two central values for even counts.
fn median_of_sq_distances(d2: &mut [f64]) -> f64 {
    let len = d2.len();
    let mid = len / 2;
    let (left, upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = upper.sqrt();
    if len % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max).sqrt();
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v)
    }

    #[test]
    fn eval_examples() {
        let k1 = GaussianKernel::new(1.0).unwrap();
        assert_eq!(k1.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let v = [1.0, 1.0];
        assert!((k1.eval(&[0.0, 0.0], &v).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let k2 = GaussianKernel::new(2.0).unwrap();
        assert!((k2.eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_width() {
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(-1.0).is_err());
        assert!(GaussianKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_heuristic(&col(&[0.0, 2.0])).unwrap(), 2.0);
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 3.0])).unwrap(), 2.0);
        // distances {1, 3, 6, 2, 5, 3}: sorted {1,2,3,3,5,6}, median 3
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 3.0, 6.0])).unwrap(), 3.0);
        // distances {1, 2, 4, 1, 3, 2}: sorted {1,1,2,2,3,4}, median 2
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 2.0, 4.0])).unwrap(), 2.0);
    }

    #[test]
    fn median_errors() {
        assert!(matches!(
            median_heuristic(&col(&[1.0])),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            median_heuristic(&col(&[1.0, 1.0, 1.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn median_matches_brute_force_sorted() {
        let mut rng = rng_from_seed(11);
        let pts: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let mut all = Vec::new();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                all.push((pts[i] - pts[j]).abs());
            }
        }
        all.sort_by(f64::total_cmp);
        let k = all.len();
        let expected = if k % 2 == 1 {
            all[k / 2]
        } else {
            0.5 * (all[k / 2 - 1] + all[k / 2])
        };
        let got = median_heuristic(&col(&pts)).unwrap();
        assert!((got - expected).abs() <= 1e-15 * expected);
    }

    #[test]
    fn median_translation_and_scale() {
        let mut rng = rng_from_seed(3);
        let rows: Vec<[f64; 2]> = (0..60)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let base = median_heuristic(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let shifted: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] + 5.0, r[1] - 2.0]).collect();
        let scaled: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] * 3.0, r[1] * 3.0]).collect();
        let m_shift = median_heuristic(&Matrix::from_rows(&shifted).unwrap()).unwrap();
        let m_scale = median_heuristic(&Matrix::from_rows(&scaled).unwrap()).unwrap();
        assert!((m_shift - base).abs() < 1e-12 * base);
        assert!((m_scale - 3.0 * base).abs() < 1e-12 * base);
    }

    #[test]
    fn subsample_cap_is_exact_below_cap() {
        let mut rng = rng_from_seed(5);
        let pts: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let full = median_heuristic_with(&col(&pts), 50, 1).unwrap();
        let capped = median_heuristic_with(&col(&pts), 1000, 2).unwrap();
        assert_eq!(full, capped);
        // above the cap the result is seeded and deterministic
        let a = median_heuristic_with(&col(&pts), 20, 9).unwrap();
        let b = median_heuristic_with(&col(&pts), 20, 9).unwrap();
        assert_eq!(a, b);
    }
}

//! Oracles shared by the integration tests.
#![allow(dead_code)]

use nfsic::{GaussianKernel, JointSample, Matrix, TestLocations};

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS distance and its asymptotic p-value (Stephens' correction).
pub fn ks_test(values: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}

/// Spearman rank correlation (no ties expected).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn feat(sample: &JointSample, kx: &GaussianKernel, ky: &GaussianKernel, locs: &TestLocations, i: usize, m: usize) -> (f64, f64) {
    (
        kx.eval(sample.xs().row(m), locs.vs().row(i)).unwrap(),
        ky.eval(sample.ys().row(m), locs.ws().row(i)).unwrap(),
    )
}

/// `u_hat` as the pair sum `1/(n(n-1)) sum_{a != b} h(z_a, z_b)`.
pub fn brute_u_hat(sample: &JointSample, kx: &GaussianKernel, ky: &GaussianKernel, locs: &TestLocations) -> Vec<f64> {
    let n = sample.n();
    (0..locs.len())
        .map(|i| {
            let f: Vec<(f64, f64)> = (0..n).map(|m| feat(sample, kx, ky, locs, i, m)).collect();
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        acc += 0.5 * (f[a].0 - f[b].0) * (f[a].1 - f[b].1);
                    }
                }
            }
            acc / (n * (n - 1)) as f64
        })
        .collect()
}

/// V-statistic over all ordered pairs, including `a == b`.
pub fn brute_u_hat_biased(sample: &JointSample, kx: &GaussianKernel, ky: &GaussianKernel, locs: &TestLocations) -> Vec<f64> {
    let n = sample.n();
    (0..locs.len())
        .map(|i| {
            let f: Vec<(f64, f64)> = (0..n).map(|m| feat(sample, kx, ky, locs, i, m)).collect();
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += 0.5 * (f[a].0 - f[b].0) * (f[a].1 - f[b].1);
                }
            }
            acc / (n * n) as f64
        })
        .collect()
}

/// Covariance from per-sample centered products, by direct loops.
pub fn brute_sigma_hat(sample: &JointSample, kx: &GaussianKernel, ky: &GaussianKernel, locs: &TestLocations) -> Matrix {
    let n = sample.n();
    let j = locs.len();
    let ub = brute_u_hat_biased(sample, kx, ky, locs);
    let mut gam = vec![vec![0.0; n]; j];
    for (i, g) in gam.iter_mut().enumerate() {
        let f: Vec<(f64, f64)> = (0..n).map(|m| feat(sample, kx, ky, locs, i, m)).collect();
        let kbar = f.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let lbar = f.iter().map(|p| p.1).sum::<f64>() / n as f64;
        for m in 0..n {
            g[m] = (f[m].0 - kbar) * (f[m].1 - lbar) - ub[i];
        }
    }
    let mut s = Matrix::zeros(j, j);
    for a in 0..j {
        for b in 0..j {
            let v: f64 = (0..n).map(|m| gam[a][m] * gam[b][m]).sum::<f64>() / n as f64;
            s.set(a, b, v);
        }
    }
    s
}

/// `max |a - b| / max |b|`, with a floor on the scale.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

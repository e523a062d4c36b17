//! Seeded synthetic benchmark problems.
//!
//! Gaussian variates come from `rand_distr::StandardNormal` (ziggurat) on a
//! ChaCha8 stream, so samples are reproducible for a given seed and build.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::JointSample;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

/// Proposals allowed per accepted point in the sinusoid sampler.
const MAX_PROPOSALS_PER_POINT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Independent standard normals (null holds).
    Sg,
    /// Density proportional to `1 + sin(wx) sin(wy)` on `(-pi, pi)^2`.
    Sin,
    /// `y = |z| * prod(sign(x_i))`.
    Gsign,
    /// `y = -x + noise`.
    NegLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dx: usize,
    pub dy: usize,
    pub omega: f64,
    pub noise_sd: f64,
}

impl ProblemSpec {
    pub fn sg(dx: usize, dy: usize) -> Self {
        ProblemSpec {
            kind: ProblemKind::Sg,
            dx,
            dy,
            omega: 1.0,
            noise_sd: 0.3,
        }
    }

    pub fn sin(omega: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::Sin,
            dx: 1,
            dy: 1,
            omega,
            noise_sd: 0.3,
        }
    }

    pub fn gsign(dx: usize) -> Self {
        ProblemSpec {
            kind: ProblemKind::Gsign,
            dx,
            dy: 1,
            omega: 1.0,
            noise_sd: 0.3,
        }
    }

    pub fn neg_linear(noise_sd: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::NegLinear,
            dx: 1,
            dy: 1,
            omega: 1.0,
            noise_sd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dx == 0 || self.dy == 0 {
            return Err(invalid("problem dimensions must be positive"));
        }
        match self.kind {
            ProblemKind::Sg => Ok(()),
            ProblemKind::Sin if self.dx != 1 || self.dy != 1 => {
                Err(invalid("the sinusoid problem is one-dimensional (dx = dy = 1)"))
            }
            ProblemKind::Sin if !(self.omega > 0.0) || !self.omega.is_finite() => {
                Err(invalid(format!("omega must be positive, got {}", self.omega)))
            }
            ProblemKind::Gsign if self.dy != 1 => Err(invalid("gsign has dy = 1")),
            ProblemKind::NegLinear if self.dx != 1 || self.dy != 1 => {
                Err(invalid("neg-linear is one-dimensional (dx = dy = 1)"))
            }
            ProblemKind::NegLinear if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() => {
                Err(invalid(format!(
                    "noise_sd must be nonnegative, got {}",
                    self.noise_sd
                )))
            }
            _ => Ok(()),
        }
    }

    /// Draws `n` pairs with the given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<JointSample> {
        self.validate()?;
        match self.kind {
            ProblemKind::Sg => sample_sg(n, self.dx, self.dy, seed),
            ProblemKind::Sin => sample_sin(n, self.omega, seed),
            ProblemKind::Gsign => sample_gsign(n, self.dx, seed),
            ProblemKind::NegLinear => sample_neg_linear(n, self.noise_sd, seed),
        }
    }

    /// Whether `x` and `y` are independent under this problem.
    pub fn is_null(&self) -> bool {
        self.kind == ProblemKind::Sg
    }
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

pub fn sample_sg(n: usize, dx: usize, dy: usize, seed: u64) -> Result<JointSample> {
    check_n(n)?;
    ProblemSpec::sg(dx, dy).validate()?;
    let mut rng = rng_from_seed(seed);
    let xs = normal_matrix(&mut rng, n, dx);
    let ys = normal_matrix(&mut rng, n, dy);
    JointSample::new(xs, ys)
}

/// Exact rejection sampler: uniform proposals on `(-pi, pi)^2` accepted with
/// probability `(1 + sin(wx) sin(wy)) / 2`.
pub fn sample_sin(n: usize, omega: f64, seed: u64) -> Result<JointSample> {
    check_n(n)?;
    ProblemSpec::sin(omega).validate()?;
    let mut rng = rng_from_seed(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    while xs.len() < n {
        let mut accepted = false;
        for _ in 0..MAX_PROPOSALS_PER_POINT {
            let x: f64 = rng.random_range(-PI..PI);
            let y: f64 = rng.random_range(-PI..PI);
            let accept = 0.5 * (1.0 + (omega * x).sin() * (omega * y).sin());
            if rng.random::<f64>() < accept {
                xs.push(x);
                ys.push(y);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Degenerate(
                "sinusoid sampler exceeded its proposal budget".to_string(),
            ));
        }
    }
    JointSample::new(Matrix::column(&xs), Matrix::column(&ys))
}

pub fn sample_gsign(n: usize, dx: usize, seed: u64) -> Result<JointSample> {
    check_n(n)?;
    ProblemSpec::gsign(dx).validate()?;
    let mut rng = rng_from_seed(seed);
    let mut xs = Matrix::zeros(n, dx);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let mut sign = 1.0;
        for slot in xs.row_mut(i) {
            let v: f64 = rng.sample(StandardNormal);
            *slot = v;
            if v < 0.0 {
                sign = -sign;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        ys.push(z.abs() * sign);
    }
    JointSample::new(xs, Matrix::column(&ys))
}

pub fn sample_neg_linear(n: usize, noise_sd: f64, seed: u64) -> Result<JointSample> {
    check_n(n)?;
    ProblemSpec::neg_linear(noise_sd).validate()?;
    let mut rng = rng_from_seed(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(-x + noise_sd * z);
    }
    JointSample::new(Matrix::column(&xs), Matrix::column(&ys))
}

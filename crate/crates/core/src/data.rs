//! Paired samples and test locations.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// `n` paired observations `(x_i, y_i)` with `x_i` in R^dx and `y_i` in R^dy.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    xs: Matrix,
    ys: Matrix,
}

impl JointSample {
    pub fn new(xs: Matrix, ys: Matrix) -> Result<Self> {
        if xs.rows() != ys.rows() {
            return Err(invalid(format!(
                "x has {} rows but y has {} rows",
                xs.rows(),
                ys.rows()
            )));
        }
        if xs.rows() < 2 {
            return Err(invalid(format!(
                "a joint sample needs at least 2 rows, got {}",
                xs.rows()
            )));
        }
        if xs.cols() == 0 || ys.cols() == 0 {
            return Err(invalid("x and y need at least one column"));
        }
        if !xs.is_finite() || !ys.is_finite() {
            return Err(invalid("sample contains non-finite values"));
        }
        Ok(JointSample { xs, ys })
    }

    pub fn from_rows<A: AsRef<[f64]>, B: AsRef<[f64]>>(xs: &[A], ys: &[B]) -> Result<Self> {
        JointSample::new(Matrix::from_rows(xs)?, Matrix::from_rows(ys)?)
    }

    pub fn xs(&self) -> &Matrix {
        &self.xs
    }

    pub fn ys(&self) -> &Matrix {
        &self.ys
    }

    pub fn n(&self) -> usize {
        self.xs.rows()
    }

    pub fn dx(&self) -> usize {
        self.xs.cols()
    }

    pub fn dy(&self) -> usize {
        self.ys.cols()
    }

    /// Rows `indices` of both sides, pairs kept intact.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        JointSample::new(self.xs.select_rows(indices), self.ys.select_rows(indices))
    }

    /// Same xs, ys rows reordered by `perm`.
    pub fn with_permuted_y(&self, perm: &[usize]) -> Result<Self> {
        JointSample::new(self.xs.clone(), self.ys.select_rows(perm))
    }

    pub fn into_parts(self) -> (Matrix, Matrix) {
        (self.xs, self.ys)
    }
}

/// `J` paired locations `(v_i, w_i)` at which embeddings are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLocations {
    vs: Matrix,
    ws: Matrix,
}

impl TestLocations {
    pub fn new(vs: Matrix, ws: Matrix) -> Result<Self> {
        if vs.rows() != ws.rows() {
            return Err(invalid(format!(
                "v has {} locations but w has {}",
                vs.rows(),
                ws.rows()
            )));
        }
        if vs.rows() == 0 {
            return Err(invalid("at least one test location is required"));
        }
        if !vs.is_finite() || !ws.is_finite() {
            return Err(invalid("test locations contain non-finite values"));
        }
        Ok(TestLocations { vs, ws })
    }

    pub fn from_rows<A: AsRef<[f64]>, B: AsRef<[f64]>>(vs: &[A], ws: &[B]) -> Result<Self> {
        TestLocations::new(Matrix::from_rows(vs)?, Matrix::from_rows(ws)?)
    }

    pub fn vs(&self) -> &Matrix {
        &self.vs
    }

    pub fn ws(&self) -> &Matrix {
        &self.ws
    }

    pub fn len(&self) -> usize {
        self.vs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vs.rows() == 0
    }

    pub fn dx(&self) -> usize {
        self.vs.cols()
    }

    pub fn dy(&self) -> usize {
        self.ws.cols()
    }

    pub fn check_compatible(&self, sample: &JointSample) -> Result<()> {
        if self.dx() != sample.dx() {
            return Err(Error::DimensionMismatch {
                expected: sample.dx(),
                found: self.dx(),
            });
        }
        if self.dy() != sample.dy() {
            return Err(Error::DimensionMismatch {
                expected: sample.dy(),
                found: self.dy(),
            });
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        TestLocations::new(self.vs.select_rows(indices), self.ws.select_rows(indices))
    }
}

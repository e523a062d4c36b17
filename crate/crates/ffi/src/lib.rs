//! C ABI for the `nfsic` library.
//!
//! Every fallible function returns an [`NfsicStatus`]; results go through out
//! pointers. On failure, [`nfsic_last_error_message`] describes the error for
//! the calling thread. Matrices are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use nfsic::baselines::hsic_statistic;
use nfsic::chi2::chi2_quantile;
use nfsic::kernels::median_heuristic;
use nfsic::statistic::nfsic_statistic as compute_statistic;
use nfsic::{
    adaptive_test, test_chi2, Error, GaussianKernel, JointSample, Matrix, TestLocations, TestOutcome, TuningConfig,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfsicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    Degenerate = 4,
    SingularCovariance = 5,
    Domain = 6,
    Panic = 7,
    Other = 8,
}

/// Opaque paired sample. Create with [`nfsic_sample_new`], release with
/// [`nfsic_sample_free`].
pub struct NfsicSample {
    inner: JointSample,
}

/// Decision of a test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NfsicOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Squared kernel widths used; tuned values for the adaptive test.
    pub sigma2_x: f64,
    pub sigma2_y: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NfsicStatus {
    match e {
        Error::InvalidInput(_) | Error::Parse { .. } => NfsicStatus::InvalidInput,
        Error::DimensionMismatch { .. } => NfsicStatus::DimensionMismatch,
        Error::Degenerate(_) => NfsicStatus::Degenerate,
        Error::SingularCovariance { .. } => NfsicStatus::SingularCovariance,
        Error::Domain(_) => NfsicStatus::Domain,
        Error::TooManyFailures { .. } | Error::Io(_) => NfsicStatus::Other,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NfsicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NfsicStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            NfsicStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            NfsicStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn doubles<'a>(ptr: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

fn out_ref<'a, T>(ptr: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller promises `ptr` is null or valid for writes.
    unsafe { ptr.as_mut() }.ok_or(Failure::Null(what))
}

fn sample_ref<'a>(ptr: *const NfsicSample) -> Result<&'a JointSample, Failure> {
    // SAFETY: the caller passes a handle from `nfsic_sample_new` or null.
    unsafe { ptr.as_ref() }.map(|s| &s.inner).ok_or(Failure::Null("sample"))
}

fn matrix(ptr: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Matrix, Failure> {
    let len = rows
        .checked_mul(cols)
        .ok_or(Failure::Lib(Error::InvalidInput(format!("{what}: size overflow"))))?;
    // SAFETY: the caller promises `ptr` holds `rows * cols` doubles.
    let data = unsafe { doubles(ptr, len, what) }?;
    Ok(Matrix::from_vec(rows, cols, data.to_vec())?)
}

fn locations(sample: &JointSample, v: *const f64, w: *const f64, j: usize) -> Result<TestLocations, Failure> {
    let vs = matrix(v, j, sample.dx(), "v")?;
    let ws = matrix(w, j, sample.dy(), "w")?;
    Ok(TestLocations::new(vs, ws)?)
}

fn fill(out: &mut NfsicOutcome, o: &TestOutcome, kx: f64, ky: f64) {
    *out = NfsicOutcome {
        statistic: o.statistic,
        threshold: o.threshold,
        p_value: o.p_value,
        reject: o.reject,
        sigma2_x: kx,
        sigma2_y: ky,
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nfsic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn nfsic_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `x` (`n x dx`) and `y` (`n x dy`) into a new sample handle.
///
/// # Safety
/// `x` and `y` must hold `n * dx` and `n * dy` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfsic_sample_new(
    x: *const f64,
    n: usize,
    dx: usize,
    y: *const f64,
    dy: usize,
    out: *mut *mut NfsicSample,
) -> NfsicStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = std::ptr::null_mut();
        let sample = JointSample::new(matrix(x, n, dx, "x")?, matrix(y, n, dy, "y")?)?;
        *slot = Box::into_raw(Box::new(NfsicSample { inner: sample }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sample` must come from [`nfsic_sample_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nfsic_sample_free(sample: *mut NfsicSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfsic_sample_n(sample: *const NfsicSample) -> usize {
    sample.as_ref().map_or(0, |s| s.inner.n())
}

/// Median pairwise Euclidean distance of the rows of `points` (`n x d`).
///
/// # Safety
/// `points` must hold `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfsic_median_heuristic(points: *const f64, n: usize, d: usize, out: *mut f64) -> NfsicStatus {
    guard(|| {
        let m = matrix(points, n, d, "points")?;
        *out_ref(out, "out")? = median_heuristic(&m)?;
        Ok(())
    })
}

/// Normalized statistic with Gaussian widths `sigma2_x`, `sigma2_y` and `j`
/// locations `v` (`j x dx`), `w` (`j x dy`).
///
/// # Safety
/// Pointers must be valid for the sizes implied by the sample and `j`.
#[no_mangle]
pub unsafe extern "C" fn nfsic_statistic(
    sample: *const NfsicSample,
    sigma2_x: f64,
    sigma2_y: f64,
    v: *const f64,
    w: *const f64,
    j: usize,
    gamma: f64,
    out: *mut f64,
) -> NfsicStatus {
    guard(|| {
        let s = sample_ref(sample)?;
        let locs = locations(s, v, w, j)?;
        let kx = GaussianKernel::new(sigma2_x)?;
        let ky = GaussianKernel::new(sigma2_y)?;
        *out_ref(out, "out")? = compute_statistic(s, &kx, &ky, &locs, gamma)?.lambda_hat;
        Ok(())
    })
}

/// Test with fixed parameters and the asymptotic chi-squared threshold.
///
/// # Safety
/// As for [`nfsic_statistic`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfsic_test_chi2(
    sample: *const NfsicSample,
    sigma2_x: f64,
    sigma2_y: f64,
    v: *const f64,
    w: *const f64,
    j: usize,
    gamma: f64,
    alpha: f64,
    out: *mut NfsicOutcome,
) -> NfsicStatus {
    guard(|| {
        let s = sample_ref(sample)?;
        let locs = locations(s, v, w, j)?;
        let kx = GaussianKernel::new(sigma2_x)?;
        let ky = GaussianKernel::new(sigma2_y)?;
        let o = test_chi2(&compute_statistic(s, &kx, &ky, &locs, gamma)?, alpha)?;
        fill(out_ref(out, "out")?, &o, sigma2_x, sigma2_y);
        Ok(())
    })
}

/// Tunes widths and `j` locations on half the sample and tests on the rest,
/// with default settings and the given seed.
///
/// # Safety
/// `sample` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfsic_adaptive_test(
    sample: *const NfsicSample,
    j: usize,
    alpha: f64,
    seed: u64,
    out: *mut NfsicOutcome,
) -> NfsicStatus {
    guard(|| {
        let s = sample_ref(sample)?;
        let cfg = TuningConfig {
            seed,
            ..TuningConfig::default()
        };
        let o = adaptive_test(s, j, alpha, &cfg)?;
        let (kx, ky) = o
            .tuned_params
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |t| (t.sigma2_x, t.sigma2_y));
        fill(out_ref(out, "out")?, &o, kx, ky);
        Ok(())
    })
}

/// Biased quadratic-time HSIC estimate.
///
/// # Safety
/// `sample` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfsic_hsic_statistic(
    sample: *const NfsicSample,
    sigma2_x: f64,
    sigma2_y: f64,
    out: *mut f64,
) -> NfsicStatus {
    guard(|| {
        let s = sample_ref(sample)?;
        let kx = GaussianKernel::new(sigma2_x)?;
        let ky = GaussianKernel::new(sigma2_y)?;
        *out_ref(out, "out")? = hsic_statistic(s, &kx, &ky)?;
        Ok(())
    })
}

/// `prob`-quantile of the chi-squared distribution with `dof` degrees of freedom.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfsic_chi2_quantile(dof: usize, prob: f64, out: *mut f64) -> NfsicStatus {
    guard(|| {
        *out_ref(out, "out")? = chi2_quantile(dof, prob)?;
        Ok(())
    })
}

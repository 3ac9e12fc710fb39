//! C ABI over `kriging-update`.
//!
//! Every function returns a [`KuStatus`]. On anything other than
//! `KU_STATUS_OK` a description is available from [`ku_last_error_message`]
//! on the same thread. States are opaque [`KuState`] handles created by
//! [`ku_state_fit`] and released with [`ku_state_free`].
//!
//! Points are passed as row-major `count × dim` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use kriging_update::{Kernel, KernelFamily, KrigingError, KrigingState, Point, UpdateBatch};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    DegenerateNewPoint = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KuKernel {
    Brownian = 0,
    SquaredExponential = 1,
    Matern52 = 2,
}

impl From<KuKernel> for KernelFamily {
    fn from(k: KuKernel) -> Self {
        match k {
            KuKernel::Brownian => KernelFamily::Brownian,
            KuKernel::SquaredExponential => KernelFamily::SquaredExponential,
            KuKernel::Matern52 => KernelFamily::Matern52,
        }
    }
}

/// Fitted posterior. Opaque to C.
pub struct KuState {
    inner: KrigingState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(KuStatus, String);

impl From<KrigingError> for Failure {
    fn from(e: KrigingError) -> Self {
        let status = match e {
            KrigingError::DimensionMismatch { .. } => KuStatus::DimensionMismatch,
            KrigingError::NotPositiveDefinite { .. } => KuStatus::NotPositiveDefinite,
            KrigingError::DegenerateNewPoint { .. } => KuStatus::DegenerateNewPoint,
            _ => KuStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(KuStatus::NullPointer, format!("`{name}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KuStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KuStatus::Panic
        }
    }
}

/// # Safety
/// `data` must be null or point to `len` readable doubles.
unsafe fn doubles<'a>(data: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(data, len))
}

/// # Safety
/// `data` must be null or point to `count * dim` readable doubles.
unsafe fn read_points(data: *const f64, count: usize, dim: usize, name: &str) -> Result<Vec<Point>, Failure> {
    if dim == 0 {
        return Err(Failure(KuStatus::InvalidArgument, "dim must be at least 1".into()));
    }
    let len = count
        .checked_mul(dim)
        .ok_or_else(|| Failure(KuStatus::InvalidArgument, "count * dim overflows".into()))?;
    doubles(data, len, name)?
        .chunks_exact(dim)
        .map(|c| Point::new(c.to_vec()).map_err(Failure::from))
        .collect()
}

/// # Safety
/// `state` must be null or a live handle from [`ku_state_fit`].
unsafe fn state_ref<'a>(state: *const KuState) -> Result<&'a KrigingState, Failure> {
    state.as_ref().map(|s| &s.inner).ok_or_else(|| null("state"))
}

fn check_dim(state: &KrigingState, dim: usize) -> Result<(), Failure> {
    match state.dim() {
        Some(d) if d != dim => Err(KrigingError::DimensionMismatch { expected: d, found: dim }.into()),
        _ => Ok(()),
    }
}

/// Thread-local description of the last failure, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ku_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fits a posterior to `n` observations (`n` may be 0 for the prior) and
/// stores a new handle in `*out`.
///
/// # Safety
/// `points` must hold `n * dim` doubles and `values` `n` doubles (either may
/// be null when `n == 0`); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ku_state_fit(
    kernel: KuKernel,
    variance: f64,
    lengthscale: f64,
    jitter: f64,
    points: *const f64,
    values: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut KuState,
) -> KuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kernel = Kernel::new(kernel.into(), variance, lengthscale)?;
        let pts = read_points(points, n, dim, "points")?;
        let vals = doubles(values, n, "values")?.to_vec();
        let inner = KrigingState::fit(kernel, pts, vals, jitter)?;
        *out = Box::into_raw(Box::new(KuState { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ku_state_free(state: *mut KuState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Number of observations the posterior is conditioned on.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ku_state_len(state: *const KuState, out: *mut usize) -> KuStatus {
    guard(|| {
        let s = state_ref(state)?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.len();
        Ok(())
    })
}

/// Posterior mean and variance at `m` query points.
///
/// # Safety
/// `queries` must hold `m * dim` doubles; `mean` and `variance` must each
/// have room for `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn ku_state_predict(
    state: *const KuState,
    queries: *const f64,
    m: usize,
    dim: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> KuStatus {
    guard(|| {
        let s = state_ref(state)?;
        check_dim(s, dim)?;
        let qs = read_points(queries, m, dim, "queries")?;
        if m > 0 && (mean.is_null() || variance.is_null()) {
            return Err(null("mean/variance"));
        }
        for (i, q) in qs.iter().enumerate() {
            let p = s.predict(q)?;
            *mean.add(i) = p.mean;
            *variance.add(i) = p.variance;
        }
        Ok(())
    })
}

/// Posterior covariance between two points.
///
/// # Safety
/// `x` and `y` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ku_state_predict_cov(
    state: *const KuState,
    x: *const f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> KuStatus {
    guard(|| {
        let s = state_ref(state)?;
        check_dim(s, dim)?;
        let x = read_points(x, 1, dim, "x")?;
        let y = read_points(y, 1, dim, "y")?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.predict_cov(&x[0], &y[0])?;
        Ok(())
    })
}

/// Conditions the state in place on `k >= 1` new observations by extending
/// its Cholesky factor. On failure the state is unchanged.
///
/// # Safety
/// `state` must be a live handle; `points` must hold `k * dim` doubles and
/// `values` `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn ku_state_assimilate(
    state: *mut KuState,
    points: *const f64,
    values: *const f64,
    k: usize,
    dim: usize,
) -> KuStatus {
    guard(|| {
        let s = state.as_mut().ok_or_else(|| null("state"))?;
        check_dim(&s.inner, dim)?;
        let pts = read_points(points, k, dim, "points")?;
        let vals = doubles(values, k, "values")?.to_vec();
        s.inner = s.inner.assimilate(&UpdateBatch::new(pts, vals)?)?;
        Ok(())
    })
}

/// Evaluates the batch update for `k` new observations at `m` queries
/// without modifying the state. `naive_variance` may be null; when given it
/// receives the diagonal-only variance, which is wrong for `k > 1`.
///
/// # Safety
/// `new_points` must hold `k * dim` doubles, `new_values` `k` doubles and
/// `queries` `m * dim` doubles. `mean`, `variance` and a non-null
/// `naive_variance` must each have room for `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn ku_update_predict(
    state: *const KuState,
    new_points: *const f64,
    new_values: *const f64,
    k: usize,
    queries: *const f64,
    m: usize,
    dim: usize,
    mean: *mut f64,
    variance: *mut f64,
    naive_variance: *mut f64,
) -> KuStatus {
    guard(|| {
        let s = state_ref(state)?;
        check_dim(s, dim)?;
        let pts = read_points(new_points, k, dim, "new_points")?;
        let vals = doubles(new_values, k, "new_values")?.to_vec();
        let qs = read_points(queries, m, dim, "queries")?;
        if m > 0 && (mean.is_null() || variance.is_null()) {
            return Err(null("mean/variance"));
        }
        let batch = UpdateBatch::new(pts, vals)?;
        let block = s.conditional_block(batch.points())?;
        for (i, q) in qs.iter().enumerate() {
            *mean.add(i) = block.update_mean(&batch, q)?;
            *variance.add(i) = block.update_variance_corrected(q)?;
            if !naive_variance.is_null() {
                *naive_variance.add(i) = block.update_variance_naive(q)?.value;
            }
        }
        Ok(())
    })
}

//! C ABI over `mcv_core::pipeline::Pipeline`.
//!
//! Every entry point returns an `McvStatus`; on failure the message is kept
//! per thread and can be read with `mcv_last_error_message`. Missing
//! covariates are passed as NaN. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mcv_core::config::Method;
use mcv_core::pipeline::{Pipeline, PipelineConfig};
use mcv_core::{Dataset, MaskedSample, McvError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    InsufficientData = 4,
    NotCalibrated = 5,
    Numerical = 6,
    Config = 7,
    Io = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McvMethod {
    Split = 0,
    MdaExact = 1,
    MdaNested = 2,
    MdaNestedStar = 3,
    Weighted = 4,
    Arc = 5,
    Uncorrected = 6,
}

impl From<McvMethod> for Method {
    fn from(m: McvMethod) -> Self {
        match m {
            McvMethod::Split => Method::Split,
            McvMethod::MdaExact => Method::MdaExact,
            McvMethod::MdaNested => Method::MdaNested,
            McvMethod::MdaNestedStar => Method::MdaNestedStar,
            McvMethod::Weighted => Method::Weighted,
            McvMethod::Arc => Method::Arc,
            McvMethod::Uncorrected => Method::Uncorrected,
        }
    }
}

/// Opaque handle.
pub struct McvPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &McvError) -> McvStatus {
    match e {
        McvError::Config(_) => McvStatus::Config,
        McvError::Parse { .. } | McvError::InvalidInput(_) => McvStatus::InvalidInput,
        McvError::DimensionMismatch { .. } => McvStatus::DimensionMismatch,
        McvError::InsufficientData(_) => McvStatus::InsufficientData,
        McvError::Calibration(_) => McvStatus::NotCalibrated,
        McvError::Numerical(_) => McvStatus::Numerical,
        McvError::Io(_) => McvStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), McvStatus>) -> McvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McvStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            McvStatus::Panic
        }
    }
}

fn fail(e: McvError) -> McvStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> McvStatus {
    set_error(format!("{what} is null"));
    McvStatus::NullPointer
}

/// # Safety
/// `x` must point to `n * d` doubles and `y` to `n` doubles.
unsafe fn dataset(x: *const f64, y: *const f64, n: usize, d: usize) -> Result<Dataset, McvStatus> {
    if x.is_null() {
        return Err(null("x"));
    }
    if y.is_null() {
        return Err(null("y"));
    }
    if d == 0 {
        return Err(fail(McvError::invalid("dimension must be positive")));
    }
    let len = n.checked_mul(d).ok_or_else(|| fail(McvError::invalid("n * d overflows")))?;
    let xs = std::slice::from_raw_parts(x, len);
    let ys = std::slice::from_raw_parts(y, n);
    let samples = xs
        .chunks_exact(d)
        .zip(ys)
        .map(|(row, &y)| MaskedSample::new(row_to_options(row), y))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    Dataset::new(samples, d).map_err(fail)
}

fn row_to_options(row: &[f64]) -> Vec<Option<f64>> {
    row.iter().map(|&v| if v.is_nan() { None } else { Some(v) }).collect()
}

/// Fits the imputer, quantile band and ratio classifier on `n` training rows
/// of dimension `d`. Writes a new handle to `out`; free it with
/// `mcv_pipeline_free`.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mcv_pipeline_fit(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    alpha: f64,
    seed: u64,
    out: *mut *mut McvPipeline,
) -> McvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(fail(McvError::invalid(format!("alpha must lie in (0, 1), got {alpha}"))));
        }
        let train = dataset(x, y, n, d)?;
        let mut cfg = PipelineConfig { seed, ..Default::default() };
        cfg.settings.alpha = alpha;
        let inner = Pipeline::fit(&train, cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(McvPipeline { inner }));
        Ok(())
    })
}

/// Calibrates on `n` rows; replaces any previous calibration.
///
/// # Safety
/// `p` must come from `mcv_pipeline_fit`; `x` must point to `n * d` doubles
/// and `y` to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mcv_pipeline_calibrate(
    p: *mut McvPipeline,
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
) -> McvStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("pipeline"))?;
        let cal = dataset(x, y, n, d)?;
        p.inner.calibrate(&cal).map_err(fail)
    })
}

/// Prediction interval for one row; NaN cells are the test mask. Infinite
/// bounds are reported as +-INFINITY, an empty set as
/// lower = +INFINITY, upper = -INFINITY.
///
/// # Safety
/// `p` must come from `mcv_pipeline_fit`; `x` must point to `d` doubles;
/// `lower` and `upper` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcv_pipeline_predict(
    p: *const McvPipeline,
    x: *const f64,
    d: usize,
    method: McvMethod,
    lower: *mut f64,
    upper: *mut f64,
) -> McvStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        if lower.is_null() || upper.is_null() {
            return Err(null("output bound"));
        }
        let row = row_to_options(std::slice::from_raw_parts(x, d));
        let iv = p.inner.predict(&row, method.into()).map_err(fail)?;
        if iv.is_empty() {
            *lower = f64::INFINITY;
            *upper = f64::NEG_INFINITY;
        } else {
            *lower = iv.lower();
            *upper = iv.upper();
        }
        Ok(())
    })
}

/// Number of covariates the pipeline was fitted on, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or come from `mcv_pipeline_fit`.
#[no_mangle]
pub unsafe extern "C" fn mcv_pipeline_dim(p: *const McvPipeline) -> usize {
    p.as_ref().map_or(0, |p| p.inner.dim())
}

/// # Safety
/// `p` must be null or come from `mcv_pipeline_fit`, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mcv_pipeline_free(p: *mut McvPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `mcv_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mcv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static version string.
#[no_mangle]
pub extern "C" fn mcv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

//! C ABI over the `rulformer` library.
//!
//! Every fallible function returns a [`RulStatus`]; on failure a message is
//! available from [`rul_last_error_message`] on the same thread. Models and
//! regime normalizers are opaque handles created by `*_load` and released by
//! the matching `*_free`.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rulformer::cmapss::{N_SENSORS, N_SETTINGS};
use rulformer::evaluation::{phm08_score, rmse, ScoreParams};
use rulformer::regimes::RegimeModel;
use rulformer::transformer::RulModel;
use rulformer::windowing::{piecewise_rul, unscale_unchecked, RulPolicy, WindowedSample};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RulStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Model = 5,
    Panic = 6,
}

/// Trained RUL model.
pub struct RulModelHandle {
    model: RulModel,
}

/// Fitted operating-regime normalizer.
pub struct RulRegimeHandle {
    regime: RegimeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: RulStatus, msg: impl Into<String>) -> RulStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> RulStatus) -> RulStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RulStatus::Panic, msg)
        }
    }
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn rul_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rul_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, RulStatus> {
    if path.is_null() {
        return Err(fail(RulStatus::NullPointer, "path is null"));
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| fail(RulStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], RulStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RulStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: caller guarantees `n` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

/// Load a model checkpoint. On success `*out` owns a handle to release with
/// [`rul_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rul_model_load(path: *const c_char, out: *mut *mut RulModelHandle) -> RulStatus {
    guard(|| {
        if out.is_null() {
            return fail(RulStatus::NullPointer, "out is null");
        }
        // SAFETY: forwarded caller contract.
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RulModel::load(path) {
            Ok(model) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = Box::into_raw(Box::new(RulModelHandle { model })) };
                RulStatus::Ok
            }
            Err(rulformer::transformer::ModelError::Io { path, source }) => {
                fail(RulStatus::Io, format!("{path}: {source}"))
            }
            Err(e) => fail(RulStatus::Format, e.to_string()),
        }
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`rul_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rul_model_free(handle: *mut RulModelHandle) {
    if !handle.is_null() {
        // SAFETY: handle was produced by Box::into_raw.
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Window length and feature count the model expects.
///
/// # Safety
/// `handle` must be a live model handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rul_model_shape(
    handle: *const RulModelHandle,
    pad_to: *mut usize,
    d_features: *mut usize,
) -> RulStatus {
    guard(|| {
        if handle.is_null() || pad_to.is_null() || d_features.is_null() {
            return fail(RulStatus::NullPointer, "null argument");
        }
        // SAFETY: checked non-null, caller keeps the handle alive.
        let c = unsafe { &(*handle).model.config };
        unsafe {
            *pad_to = c.max_len;
            *d_features = c.d_features;
        }
        RulStatus::Ok
    })
}

/// Scaled RUL prediction for one padded window; convert to cycles with
/// [`rul_unscale`].
///
/// `features` is row-major `pad_to × d_features` and `mask` has `pad_to`
/// entries (1 observed, 0 padding).
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rul_model_predict_window(
    handle: *const RulModelHandle,
    features: *const f64,
    mask: *const u8,
    pad_to: usize,
    d_features: usize,
    out: *mut f64,
) -> RulStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return fail(RulStatus::NullPointer, "null argument");
        }
        // SAFETY: caller keeps the handle alive.
        let model = unsafe { &(*handle).model };
        let (want_t, want_d) = (model.config.max_len, model.config.d_features);
        if pad_to != want_t || d_features != want_d {
            return fail(
                RulStatus::InvalidArgument,
                format!("window is {pad_to}x{d_features}, model expects {want_t}x{want_d}"),
            );
        }
        // SAFETY: forwarded caller contract.
        let (features, mask) = match unsafe {
            slice_arg(features, pad_to * d_features, "features")
                .and_then(|f| slice_arg(mask, pad_to, "mask").map(|m| (f, m)))
        } {
            Ok(v) => v,
            Err(s) => return s,
        };
        if mask.iter().any(|&m| m > 1) {
            return fail(RulStatus::InvalidArgument, "mask entries must be 0 or 1");
        }
        let sample = WindowedSample {
            features: features.to_vec(),
            mask: mask.to_vec(),
            target_scaled: 0.0,
            unit_id: 0,
            end_cycle: 0,
            pad_to,
            d_features,
        };
        match model.predict_batch(&[&sample]) {
            Ok(p) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = p[0] };
                RulStatus::Ok
            }
            Err(e) => fail(RulStatus::Model, e.to_string()),
        }
    })
}

/// Load a regime normalizer saved as JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rul_regime_model_load(path: *const c_char, out: *mut *mut RulRegimeHandle) -> RulStatus {
    guard(|| {
        if out.is_null() {
            return fail(RulStatus::NullPointer, "out is null");
        }
        // SAFETY: forwarded caller contract.
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(RulStatus::Io, format!("{path}: {e}")),
        };
        match RegimeModel::from_json(&text) {
            Ok(regime) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = Box::into_raw(Box::new(RulRegimeHandle { regime })) };
                RulStatus::Ok
            }
            Err(e) => fail(RulStatus::Format, format!("{path}: {e}")),
        }
    })
}

/// Release a regime handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`rul_regime_model_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rul_regime_model_free(handle: *mut RulRegimeHandle) {
    if !handle.is_null() {
        // SAFETY: handle was produced by Box::into_raw.
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Number of features written by [`rul_regime_model_normalize_row`].
///
/// # Safety
/// `handle` must be a live regime handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rul_regime_model_n_features(handle: *const RulRegimeHandle) -> usize {
    if handle.is_null() {
        return 0;
    }
    // SAFETY: caller keeps the handle alive.
    unsafe { (*handle).regime.d_features() }
}

/// Normalize one raw cycle: 3 operating settings and 21 sensors in, the
/// selected sensors standardized by their regime's statistics out.
///
/// # Safety
/// `settings` holds 3 values, `sensors` 21, `out` at least `out_len`;
/// `regime` may be null.
#[no_mangle]
pub unsafe extern "C" fn rul_regime_model_normalize_row(
    handle: *const RulRegimeHandle,
    settings: *const f64,
    sensors: *const f64,
    out: *mut f64,
    out_len: usize,
    regime: *mut usize,
) -> RulStatus {
    guard(|| {
        if handle.is_null() || settings.is_null() || sensors.is_null() || out.is_null() {
            return fail(RulStatus::NullPointer, "null argument");
        }
        // SAFETY: caller keeps the handle alive and passes sized buffers.
        let (model, s, x) = unsafe {
            (
                &(*handle).regime,
                &*(settings as *const [f64; N_SETTINGS]),
                &*(sensors as *const [f64; N_SENSORS]),
            )
        };
        if out_len < model.d_features() {
            return fail(
                RulStatus::InvalidArgument,
                format!("output buffer holds {out_len}, need {}", model.d_features()),
            );
        }
        let (cluster, row) = model.normalize_row(s, x);
        // SAFETY: `out` has room for `out_len >= row.len()` values.
        unsafe {
            ptr::copy_nonoverlapping(row.as_ptr(), out, row.len());
            if !regime.is_null() {
                *regime = cluster;
            }
        }
        RulStatus::Ok
    })
}

/// Root-mean-square error of `n` predictions.
///
/// # Safety
/// `preds` and `truths` hold `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rul_rmse(preds: *const f64, truths: *const f64, n: usize, out: *mut f64) -> RulStatus {
    guard(|| {
        if out.is_null() {
            return fail(RulStatus::NullPointer, "out is null");
        }
        // SAFETY: forwarded caller contract.
        let (p, t) = match unsafe { slice_arg(preds, n, "preds").and_then(|p| slice_arg(truths, n, "truths").map(|t| (p, t))) } {
            Ok(v) => v,
            Err(s) => return s,
        };
        match rmse(p, t) {
            Ok(v) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = v };
                RulStatus::Ok
            }
            Err(e) => fail(RulStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Asymmetric PHM08 score with time constants `a_early` (prediction below
/// truth) and `a_late`.
///
/// # Safety
/// `preds` and `truths` hold `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rul_phm08_score(
    preds: *const f64,
    truths: *const f64,
    n: usize,
    a_early: f64,
    a_late: f64,
    out: *mut f64,
) -> RulStatus {
    guard(|| {
        if out.is_null() {
            return fail(RulStatus::NullPointer, "out is null");
        }
        if !(a_early > 0.0 && a_late > 0.0) {
            return fail(RulStatus::InvalidArgument, "time constants must be positive");
        }
        // SAFETY: forwarded caller contract.
        let (p, t) = match unsafe { slice_arg(preds, n, "preds").and_then(|p| slice_arg(truths, n, "truths").map(|t| (p, t))) } {
            Ok(v) => v,
            Err(s) => return s,
        };
        match phm08_score(p, t, &ScoreParams { a_early, a_late }) {
            Ok(v) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = v };
                RulStatus::Ok
            }
            Err(e) => fail(RulStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Training target `min(failure - end, rul_early)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rul_piecewise_rul(end_cycle: u32, failure_cycle: u32, rul_early: u32, out: *mut u32) -> RulStatus {
    guard(|| {
        if out.is_null() {
            return fail(RulStatus::NullPointer, "out is null");
        }
        match piecewise_rul(end_cycle, failure_cycle, &RulPolicy { rul_early }) {
            Ok(v) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = v };
                RulStatus::Ok
            }
            Err(e) => fail(RulStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Scaled model output to cycles for a target capped at `rul_early`.
#[no_mangle]
pub extern "C" fn rul_unscale(y: f64, rul_early: u32) -> f64 {
    unscale_unchecked(y, &RulPolicy { rul_early })
}

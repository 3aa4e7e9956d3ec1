//! C interface to `randcontrol`.
//!
//! Handles are opaque pointers created by `rc_*_new`/`rc_config_parse`/`rc_run`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`RcStatus`]; on failure [`rc_last_error`] gives a message for the calling
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use randcontrol::campaign::run_mode;
use randcontrol::config::{validate_config, ExperimentConfig, Mode};
use randcontrol::oracles::bangbang_closed_form;
use randcontrol::Error;

/// Status codes; the first four match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    ToleranceFailure = 1,
    ConfigError = 2,
    NumericalError = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// Run mode selector for [`rc_config_set_mode`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcMode {
    Brute = 0,
    Randomized = 1,
    Bsde = 2,
    Oracle = 3,
    Campaign = 4,
}

/// Validated experiment configuration.
pub struct RcConfig {
    inner: ExperimentConfig,
}

/// Outcome of [`rc_run`].
pub struct RcResult {
    pass: bool,
    summary: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).unwrap()));
}

fn status_of(e: &Error) -> RcStatus {
    if e.is_config() {
        RcStatus::ConfigError
    } else {
        RcStatus::NumericalError
    }
}

fn guard(f: impl FnOnce() -> Result<RcStatus, (RcStatus, String)>) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            RcStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RcStatus, String)> {
    if p.is_null() {
        return Err((RcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Message of the most recent failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rc_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Parse and validate JSON configuration text into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_config_parse(json: *const c_char, out: *mut *mut RcConfig) -> RcStatus {
    guard(|| {
        if out.is_null() {
            return Err((RcStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        let inner = validate_config(text).map_err(|e| (status_of(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(RcConfig { inner }));
        Ok(RcStatus::Ok)
    })
}

/// # Safety
/// `cfg` must come from [`rc_config_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rc_config_free(cfg: *mut RcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_config_set_seed(cfg: *mut RcConfig, seed: u64) -> RcStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or((RcStatus::NullPointer, "cfg is null".to_string()))?;
        c.inner.seed = seed;
        Ok(RcStatus::Ok)
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_config_set_mode(cfg: *mut RcConfig, mode: RcMode) -> RcStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or((RcStatus::NullPointer, "cfg is null".to_string()))?;
        c.inner.mode = match mode {
            RcMode::Brute => Mode::Brute,
            RcMode::Randomized => Mode::Randomized,
            RcMode::Bsde => Mode::Bsde,
            RcMode::Oracle => Mode::Oracle,
            RcMode::Campaign => Mode::Campaign,
        };
        Ok(RcStatus::Ok)
    })
}

/// Run the configured mode. `out_dir` may be null to skip writing CSV files. On
/// `RC_STATUS_OK` or `RC_STATUS_TOLERANCE_FAILURE`, `*out` receives a result
/// handle; otherwise it is set to null.
///
/// # Safety
/// `cfg` must be a live handle, `out_dir` null or NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rc_run(
    cfg: *const RcConfig,
    out_dir: *const c_char,
    record_timings: bool,
    out: *mut *mut RcResult,
) -> RcStatus {
    guard(|| {
        if out.is_null() {
            return Err((RcStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let c = cfg.as_ref().ok_or((RcStatus::NullPointer, "cfg is null".to_string()))?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(Path::new(read_str(out_dir, "out_dir")?))
        };
        let r = run_mode(&c.inner, dir, record_timings).map_err(|e| (status_of(&e), e.to_string()))?;
        let pass = r.pass;
        *out = Box::into_raw(Box::new(RcResult {
            pass,
            summary: CString::new(r.summary.replace('\0', " ")).unwrap(),
        }));
        if pass {
            Ok(RcStatus::Ok)
        } else {
            set_error("campaign missed a tolerance");
            Ok(RcStatus::ToleranceFailure)
        }
    })
}

/// 1 when every tolerance was met, 0 otherwise (or for a null handle).
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_result_passed(res: *const RcResult) -> i32 {
    res.as_ref().map_or(0, |r| r.pass as i32)
}

/// Human-readable summary owned by the result handle.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_result_summary(res: *const RcResult) -> *const c_char {
    res.as_ref().map_or(ptr::null(), |r| r.summary.as_ptr())
}

/// # Safety
/// `res` must come from [`rc_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rc_result_free(res: *mut RcResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// `-max(|x0| - (T - t), 0)`.
#[no_mangle]
pub extern "C" fn rc_bangbang_closed_form(x0: f64, t: f64, horizon: f64) -> f64 {
    bangbang_closed_form(x0, t, horizon)
}

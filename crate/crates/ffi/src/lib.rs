//! C ABI over `cachebc`.
//!
//! Parameters and simulation reports are opaque handles owned by the caller
//! and released with the matching `*_free` function. Every fallible call
//! returns a [`CbcStatus`]; on failure the message is available from
//! [`cbc_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cachebc::analysis::{dcsit_load, dof_log_approx, performance_point};
use cachebc::rational::{parse_rational, to_f64};
use cachebc::{simulate, Error, SimReport, SystemParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoDeliveryNeeded = 3,
    InfeasibleSplit = 4,
    InvalidPacketization = 5,
    DecodeFailure = 6,
    UndefinedGap = 7,
    Internal = 8,
}

/// Opaque system parameters `(K, N, M, α)`.
pub struct CbcParams(SystemParams);

/// Opaque result of one end-to-end simulation.
pub struct CbcReport(SimReport);

/// Headline quantities for one instance, as doubles.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CbcPerformance {
    pub eta: u32,
    pub t_simple: f64,
    pub t_best: f64,
    pub t_lower: f64,
    pub dof: f64,
    pub gap: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CbcDcsitLoad {
    pub scalars: f64,
    pub load: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> CbcStatus {
    match err {
        Error::InvalidArgument(_) => CbcStatus::InvalidArgument,
        Error::NoDeliveryNeeded => CbcStatus::NoDeliveryNeeded,
        Error::InfeasibleSplit(_) => CbcStatus::InfeasibleSplit,
        Error::InvalidPacketization(_) => CbcStatus::InvalidPacketization,
        Error::CorruptedCache(_) | Error::DecodeFailure(_) => CbcStatus::DecodeFailure,
        Error::UndefinedGap => CbcStatus::UndefinedGap,
        Error::Io(_) | Error::Json(_) => CbcStatus::Internal,
    }
}

/// Runs `body`, recording errors and panics for [`cbc_last_error_message`].
fn guard(body: impl FnOnce() -> Result<(), CbcStatus>) -> CbcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CbcStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            CbcStatus::Internal
        }
    }
}

fn fail(err: Error) -> CbcStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(what: &str) -> CbcStatus {
    set_error(format!("{what} is null"));
    CbcStatus::NullPointer
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, CbcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        CbcStatus::InvalidArgument
    })
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CbcStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Creates a parameter handle. `m` and `alpha` are decimal or `a/b` strings.
///
/// # Safety
/// `m` and `alpha` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbc_params_new(
    k: u32,
    n: u64,
    m: *const c_char,
    alpha: *const c_char,
    out: *mut *mut CbcParams,
) -> CbcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = parse_rational(read_str(m, "m")?).map_err(fail)?;
        let alpha = parse_rational(read_str(alpha, "alpha")?).map_err(fail)?;
        let params = SystemParams::new(k, n, m, alpha).map_err(fail)?;
        *out = Box::into_raw(Box::new(CbcParams(params)));
        Ok(())
    })
}

/// # Safety
/// `params` must come from [`cbc_params_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cbc_params_free(params: *mut CbcParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// # Safety
/// `params` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbc_analyze(
    params: *const CbcParams,
    out: *mut CbcPerformance,
) -> CbcStatus {
    guard(|| {
        let params = deref(params, "params")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = performance_point(&params.0).map_err(fail)?;
        *out = CbcPerformance {
            eta: p.eta,
            t_simple: to_f64(&p.t_simple),
            t_best: to_f64(&p.t_best),
            t_lower: p.t_lower_f64(),
            dof: p.dof_f64(),
            gap: p.gap,
        };
        Ok(())
    })
}

/// Simulates one demand vector. With `requests` null the demand defaults to
/// `(1, 2, …, K)`; otherwise it must hold `requests_len == K` one-based file
/// indices. The report is returned even when decoding checks fail; inspect
/// it with [`cbc_report_passed`].
///
/// # Safety
/// `params` must be a live handle, `requests` null or valid for
/// `requests_len` reads, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cbc_simulate(
    params: *const CbcParams,
    requests: *const u32,
    requests_len: usize,
    seed: u64,
    out: *mut *mut CbcReport,
) -> CbcStatus {
    guard(|| {
        let params = deref(params, "params")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let requests = if requests.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(requests, requests_len))
        };
        let report = simulate(&params.0, requests, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(CbcReport(report)));
        Ok(())
    })
}

/// Whether every decode, duration and causality check held.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cbc_report_passed(report: *const CbcReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.passed())
}

/// Report as a JSON string, to be released with [`cbc_string_free`].
/// Returns null on error.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cbc_report_json(report: *const CbcReport) -> *mut c_char {
    let mut json = ptr::null_mut();
    guard(|| {
        let report = deref(report, "report")?;
        let text = serde_json::to_string(&report.0).map_err(|e| fail(e.into()))?;
        json = CString::new(text)
            .map_err(|_| CbcStatus::Internal)?
            .into_raw();
        Ok(())
    });
    json
}

/// # Safety
/// `report` must come from [`cbc_simulate`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cbc_report_free(report: *mut CbcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cbc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cbc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Large-K approximation of the sum degrees of freedom.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbc_dof_log_approx(gamma: f64, alpha: f64, out: *mut f64) -> CbcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = dof_log_approx(gamma, alpha).map_err(fail)?;
        Ok(())
    })
}

/// Delayed-CSIT feedback scalars and their load normalised by `T_c·K`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbc_dcsit_load(
    k: u64,
    cumulative: u64,
    coherence: f64,
    out: *mut CbcDcsitLoad,
) -> CbcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let load = dcsit_load(k, cumulative, coherence).map_err(fail)?;
        *out = CbcDcsitLoad {
            scalars: load.scalars,
            load: load.load,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_strips_nul_bytes() {
        set_error("bad\0input");
        let msg = unsafe { CStr::from_ptr(cbc_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "badinput");
    }

    #[test]
    fn panics_become_internal() {
        assert_eq!(guard(|| panic!("boom")), CbcStatus::Internal);
        assert_eq!(
            status_of(&Error::DecodeFailure("x".into())),
            CbcStatus::DecodeFailure
        );
    }
}

use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cachebc_ffi::*;

fn params(k: u32, n: u64, m: &str, alpha: &str) -> Result<*mut CbcParams, CbcStatus> {
    let m = CString::new(m).unwrap();
    let alpha = CString::new(alpha).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { cbc_params_new(k, n, m.as_ptr(), alpha.as_ptr(), &mut handle) };
    if status == CbcStatus::Ok {
        Ok(handle)
    } else {
        Err(status)
    }
}

fn last_error() -> String {
    let p = cbc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn analyze_small_instance() {
    let p = params(3, 3, "1", "0").unwrap();
    let mut perf = CbcPerformance::default();
    assert_eq!(unsafe { cbc_analyze(p, &mut perf) }, CbcStatus::Ok);
    assert_eq!(perf.eta, 1);
    assert!((perf.t_best - 5.0 / 6.0).abs() < 1e-15);
    assert!((perf.t_lower - 2.0 / 3.0).abs() < 1e-15);
    assert!((perf.gap - 1.25).abs() < 1e-12);
    assert!((perf.dof * perf.t_simple - 2.0 / 3.0).abs() < 1e-12);
    unsafe { cbc_params_free(p) };
}

#[test]
fn errors_map_to_codes() {
    assert_eq!(
        params(3, 3, "1", "3/2").unwrap_err(),
        CbcStatus::InvalidArgument
    );
    assert!(last_error().contains("invalid argument"));
    assert_eq!(
        params(3, 3, "x", "0").unwrap_err(),
        CbcStatus::InvalidArgument
    );

    let full = params(4, 4, "4", "0").unwrap();
    let mut perf = CbcPerformance::default();
    assert_eq!(
        unsafe { cbc_analyze(full, &mut perf) },
        CbcStatus::NoDeliveryNeeded
    );
    unsafe { cbc_params_free(full) };

    let mut handle = ptr::null_mut();
    let m = CString::new("1").unwrap();
    let status = unsafe { cbc_params_new(3, 3, m.as_ptr(), ptr::null(), &mut handle) };
    assert_eq!(status, CbcStatus::NullPointer);
    assert_eq!(
        unsafe { cbc_analyze(ptr::null(), &mut perf) },
        CbcStatus::NullPointer
    );
    assert!(unsafe { cbc_report_json(ptr::null()) }.is_null());
    assert!(!unsafe { cbc_report_passed(ptr::null()) });
}

#[test]
fn successful_call_clears_error() {
    let _ = params(3, 3, "1", "2");
    assert!(!cbc_last_error_message().is_null());
    let mut d = 0.0;
    assert_eq!(
        unsafe { cbc_dof_log_approx(0.02, 0.0, &mut d) },
        CbcStatus::Ok
    );
    assert!(cbc_last_error_message().is_null());
    assert!((d - 0.25).abs() < 0.01);
}

#[test]
fn simulate_round_trip() {
    let p = params(4, 5, "5/4", "1/2").unwrap();
    let requests = [5u32, 1, 5, 2];
    let mut report = ptr::null_mut();
    let status = unsafe { cbc_simulate(p, requests.as_ptr(), requests.len(), 9, &mut report) };
    assert_eq!(status, CbcStatus::Ok);
    assert!(unsafe { cbc_report_passed(report) });
    let json = unsafe { cbc_report_json(report) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["decode_ok"], true);
    assert_eq!(v["requests"], serde_json::json!([5, 1, 5, 2]));
    unsafe {
        cbc_string_free(json);
        cbc_report_free(report);
    }

    let bad = [9u32, 1, 1, 1];
    let mut report = ptr::null_mut();
    let status = unsafe { cbc_simulate(p, bad.as_ptr(), bad.len(), 9, &mut report) };
    assert_eq!(status, CbcStatus::InvalidArgument);
    assert!(report.is_null());
    unsafe { cbc_params_free(p) };
}

#[test]
fn dcsit_load_values() {
    let mut load = CbcDcsitLoad::default();
    assert_eq!(
        unsafe { cbc_dcsit_load(3, 0, 10.0, &mut load) },
        CbcStatus::Ok
    );
    assert_eq!(load.scalars, 7.0);
    assert!((load.load - 7.0 / 30.0).abs() < 1e-15);
    assert_eq!(
        unsafe { cbc_dcsit_load(3, 4, 10.0, &mut load) },
        CbcStatus::InvalidArgument
    );
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cachebc.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "cbc_params_new",
        "cbc_simulate",
        "cbc_report_json",
        "cbc_last_error_message",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(status.success());
}

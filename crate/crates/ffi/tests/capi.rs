use std::ffi::{CStr, CString};
use std::ptr;

use cascadebo_ffi::*;

fn case30_handle() -> *mut CbNetwork {
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { cb_network_case30(&mut net) }, CbStatus::Ok);
    assert!(!net.is_null());
    net
}

#[test]
fn counts_and_equilibrium() {
    let net = case30_handle();
    unsafe {
        assert_eq!(cb_network_num_buses(net), 30);
        assert_eq!(cb_network_num_lines(net), 41);
        let mut flows = vec![0.0; 41];
        let mut cost = 0.0;
        assert_eq!(cb_equilibrium(net, flows.as_mut_ptr(), 41, &mut cost), CbStatus::Ok);
        assert!(cost > 0.0);
        assert!(flows.iter().any(|f| *f != 0.0));

        let ones = vec![1.0; 41];
        let mut limits = vec![0.0; 41];
        assert_eq!(
            cb_tighten_limits(net, ones.as_ptr(), 41, limits.as_mut_ptr()),
            CbStatus::Ok
        );
        for (l, f) in limits.iter().zip(&flows) {
            assert_eq!(*l, f.abs());
        }
        cb_network_free(net);
    }
}

#[test]
fn dimension_errors_set_message() {
    let net = case30_handle();
    unsafe {
        let mut flows = vec![0.0; 3];
        let st = cb_equilibrium(net, flows.as_mut_ptr(), 3, ptr::null_mut());
        assert_eq!(st, CbStatus::DimensionMismatch);
        let msg = CStr::from_ptr(cb_last_error()).to_str().unwrap();
        assert!(msg.contains("expected 41"), "{msg}");
        cb_network_free(net);
    }
}

#[test]
fn parse_errors_and_nulls() {
    unsafe {
        let mut net = ptr::null_mut();
        let bad = CString::new("function mpc = broken").unwrap();
        assert_eq!(cb_network_parse(bad.as_ptr(), &mut net), CbStatus::MalformedCase);
        assert!(net.is_null());
        assert_eq!(cb_network_parse(ptr::null(), &mut net), CbStatus::NullPointer);
        assert_eq!(cb_network_num_lines(ptr::null()), 0);
        cb_network_free(ptr::null_mut());
        let text = CString::new(cascadebo::grid::CASE30).unwrap();
        assert_eq!(cb_network_parse(text.as_ptr(), &mut net), CbStatus::Ok);
        assert_eq!(cb_network_num_lines(net), 41);
        cb_network_free(net);
    }
}

#[test]
fn severity_is_reproducible() {
    let net = case30_handle();
    let x = vec![1.0; 41];
    let run = || {
        let (mut m, mut s) = (0.0, 0.0);
        let st = unsafe { cb_estimate_severity(net, x.as_ptr(), 41, 20, 1e5, 9, &mut m, &mut s) };
        assert_eq!(st, CbStatus::Ok);
        (m, s)
    };
    assert_eq!(run(), run());
    let bad = vec![1.5; 41];
    let mut m = 0.0;
    let st = unsafe {
        cb_estimate_severity(net, bad.as_ptr(), 41, 20, 1e5, 9, &mut m, ptr::null_mut())
    };
    assert_eq!(st, CbStatus::InvalidArgument);
    unsafe { cb_network_free(net) };
}

#[test]
fn ei_anchor_and_version() {
    let v = cb_expected_improvement(0.0, 1.0, 0.0);
    assert!((v - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    assert_eq!(cb_expected_improvement(2.0, 0.0, 1.0), 1.0);
    let ver = unsafe { CStr::from_ptr(cb_version()) }.to_str().unwrap();
    assert_eq!(ver, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/cascadebo.h");
    for name in [
        "cb_last_error",
        "cb_version",
        "cb_network_parse",
        "cb_network_case30",
        "cb_network_free",
        "cb_network_num_buses",
        "cb_network_num_lines",
        "cb_equilibrium",
        "cb_tighten_limits",
        "cb_estimate_severity",
        "cb_expected_improvement",
        "typedef struct CbNetwork CbNetwork",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/cascadebo.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

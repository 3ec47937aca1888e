use std::ffi::{c_char, CStr};
use std::ptr;

use pslab_ffi::*;

fn queue() -> *mut PslabQueue {
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { pslab_queue_new(0.5, 1.0, &mut q) }, PslabStatus::Ok);
    q
}

fn env(p: [f64; 2], alpha: f64) -> *mut PslabEnv {
    let g = [-1.0, 1.0, 1.0, -1.0];
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { pslab_env_new(2, g.as_ptr(), p.as_ptr(), alpha, &mut e) }, PslabStatus::Ok);
    e
}

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { pslab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(pslab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn busy_stats_match_closed_form() {
    let q = queue();
    let mut s = PslabBusyStats::default();
    assert_eq!(unsafe { pslab_busy_stats(q, &mut s) }, PslabStatus::Ok);
    assert_eq!((s.e_b, s.e_b2, s.e_b3, s.e_a), (2.0, 16.0, 288.0, 4.0));
    let mut lst = 0.0;
    assert_eq!(unsafe { pslab_busy_lst(q, 0.0, &mut lst) }, PslabStatus::Ok);
    assert!((lst - 1.0).abs() < 1e-15);
    unsafe { pslab_queue_free(q) };
}

#[test]
fn unstable_queue_is_rejected_with_message() {
    let mut q = ptr::null_mut();
    let st = unsafe { pslab_queue_new(1.0, 1.0, &mut q) };
    assert_ne!(st, PslabStatus::Ok);
    assert!(q.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { pslab_busy_stats(ptr::null(), ptr::null_mut()) }, PslabStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { pslab_env_state_count(ptr::null()) }, 0);
    unsafe { pslab_env_free(ptr::null_mut()) };
    unsafe { pslab_queue_free(ptr::null_mut()) };
}

#[test]
fn error_is_cleared_by_next_success() {
    assert_eq!(unsafe { pslab_busy_stats(ptr::null(), ptr::null_mut()) }, PslabStatus::NullPointer);
    let q = queue();
    assert_eq!(unsafe { pslab_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe { pslab_queue_free(q) };
}

#[test]
fn long_messages_are_truncated() {
    let mut q = ptr::null_mut();
    unsafe { pslab_queue_new(2.0, 1.0, &mut q) };
    let mut buf = [0x7f as c_char; 8];
    let n = unsafe { pslab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 7);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 7);
}

#[test]
fn environment_queries() {
    let e = env([0.0, 2.0], 1.0);
    assert_eq!(unsafe { pslab_env_state_count(e) }, 2);
    let mut pi = [0.0; 2];
    assert_eq!(unsafe { pslab_env_stationary(e, pi.as_mut_ptr(), 2) }, PslabStatus::Ok);
    assert!((pi[0] - 0.5).abs() < 1e-14 && (pi[1] - 0.5).abs() < 1e-14);
    assert_eq!(unsafe { pslab_env_stationary(e, pi.as_mut_ptr(), 3) }, PslabStatus::InvalidArgument);
    let (mut m, mut v) = (0.0, 0.0);
    assert_eq!(unsafe { pslab_env_p_moments(e, &mut m, &mut v) }, PslabStatus::Ok);
    assert!((m - 1.0).abs() < 1e-14 && (v - 1.0).abs() < 1e-14);
    let mut c = 0.0;
    assert_eq!(unsafe { pslab_env_covariance(e, 0.5, &mut c) }, PslabStatus::Ok);
    assert!((c - (-1.0f64).exp()).abs() < 1e-12);
    unsafe { pslab_env_free(e) };
}

#[test]
fn invalid_generator_is_rejected() {
    let g = [-1.0, 2.0, 1.0, -1.0];
    let p = [0.0, 1.0];
    let mut e = ptr::null_mut();
    let st = unsafe { pslab_env_new(2, g.as_ptr(), p.as_ptr(), 1.0, &mut e) };
    assert_eq!(st, PslabStatus::InvalidEnvironment);
    assert!(e.is_null());
    assert_eq!(unsafe { pslab_env_new(0, g.as_ptr(), p.as_ptr(), 1.0, &mut e) }, PslabStatus::InvalidArgument);
}

#[test]
fn oracles() {
    let q = queue();
    let (mut a, mut b, mut r) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { pslab_constant_p_oracle(q, 1.0, 0.0, &mut a, &mut b, &mut r) }, PslabStatus::Ok);
    assert_eq!((a, b, r), (4.0, 2.0, 0.5));
    let mut x = 0.0;
    assert_eq!(unsafe { pslab_auxey_rhs(q, -1.0, 1.0, &mut x) }, PslabStatus::Domain);
    assert_eq!(unsafe { pslab_auxey_rhs(q, 2.0, 1.0, &mut x) }, PslabStatus::Ok);
    assert!(x < 0.0);
    unsafe { pslab_queue_free(q) };
}

#[test]
fn constant_environment_expansion_is_exact_in_c() {
    let q = queue();
    let g = [0.0];
    let p = [1.0];
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { pslab_env_new(1, g.as_ptr(), p.as_ptr(), 1.0, &mut e) }, PslabStatus::Ok);
    let mut out = std::mem::MaybeUninit::<PslabExpansion>::uninit();
    let st = unsafe { pslab_expansion(q, e, PslabMethod::QuadratureHybrid as u32, 20_000, 3, 1, out.as_mut_ptr()) };
    assert_eq!(st, PslabStatus::Ok, "{}", last_error());
    let r = unsafe { out.assume_init() };
    assert_eq!(r.first_order_area, -12.0);
    assert_eq!(r.area_poly[0], 4.0);
    assert_eq!(r.c.method, PslabMethod::QuadratureHybrid);
    assert!(r.c.std_error > 0.0);
    // constant p = 1 gives c = -0.5
    assert!(((r.c.value + 0.5) / r.c.std_error).abs() < 5.0, "c = {} ± {}", r.c.value, r.c.std_error);
    unsafe {
        pslab_env_free(e);
        pslab_queue_free(q);
    }
}

#[test]
fn coefficient_estimates_are_worker_invariant() {
    let q = queue();
    let e = env([-1.0, 1.0], 1.0);
    let run = |workers| {
        let mut out = std::mem::MaybeUninit::<PslabEstimate>::uninit();
        let st = unsafe {
            pslab_estimate_coefficient(q, e, PslabCoefficient::APm as u32, PslabMethod::McJoint as u32, 10_000, 11, workers, out.as_mut_ptr())
        };
        assert_eq!(st, PslabStatus::Ok);
        unsafe { out.assume_init() }
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    assert_eq!(a.n_samples, 10_000);
    unsafe {
        pslab_env_free(e);
        pslab_queue_free(q);
    }
}

#[test]
fn bad_codes_and_closed_form_are_rejected() {
    let q = queue();
    let e = env([-1.0, 1.0], 1.0);
    let mut out = std::mem::MaybeUninit::<PslabEstimate>::uninit();
    let call = |which: u32, method: u32, out: *mut PslabEstimate| unsafe { pslab_estimate_coefficient(q, e, which, method, 10_000, 1, 1, out) };
    assert_eq!(call(17, 0, out.as_mut_ptr()), PslabStatus::InvalidArgument);
    assert_eq!(call(0, 9, out.as_mut_ptr()), PslabStatus::InvalidArgument);
    assert_ne!(call(0, PslabMethod::ClosedForm as u32, out.as_mut_ptr()), PslabStatus::Ok);
    assert_eq!(call(0, 0, ptr::null_mut()), PslabStatus::NullPointer);
    unsafe {
        pslab_env_free(e);
        pslab_queue_free(q);
    }
}

#[test]
fn header_declares_every_export() {
    let h = include_str!("../include/pslab.h");
    for sym in [
        "pslab_version",
        "pslab_last_error_message",
        "pslab_queue_new",
        "pslab_queue_free",
        "pslab_env_new",
        "pslab_env_free",
        "pslab_env_state_count",
        "pslab_env_stationary",
        "pslab_env_p_moments",
        "pslab_env_covariance",
        "pslab_busy_stats",
        "pslab_busy_lst",
        "pslab_auxey_rhs",
        "pslab_constant_p_oracle",
        "pslab_estimate_coefficient",
        "pslab_expansion",
        "typedef struct PslabQueue PslabQueue",
        "PSLAB_STATUS_NULL_POINTER",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, "#include \"pslab.h\"\nint main(void) { PslabQueue *q = 0; return pslab_queue_new(0.5, 1.0, &q) == PSLAB_STATUS_OK ? 0 : 1; }\n").unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let Ok(out) = std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include]).arg(&src).output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

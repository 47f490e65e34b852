use std::ffi::{CStr, CString};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pwchaos_ffi::*;

fn c1() -> f64 {
    let p2 = PI * PI;
    (8.0 * p2 + 3.0) / ((4.0 * p2 + 9.0) * (p2 + 1.0))
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pwc_last_error()) }.to_string_lossy().into_owned()
}

fn ex1() -> *mut PwcSystem {
    let name = CString::new("ex1").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { pwc_system_builtin(name.as_ptr(), ptr::null(), &mut sys) }, PwcStatus::Ok);
    assert!(!sys.is_null());
    sys
}

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn melnikov_through_handle_matches_closed_form() {
    let sys = ex1();
    let (mut v, mut err) = (0.0, 0.0);
    for tau in [0.1, 0.25, 0.7] {
        let st = unsafe { pwc_melnikov(sys, PwcMelnikovMode::SimplifiedTraceFree, tau, &mut v, &mut err) };
        assert_eq!(st, PwcStatus::Ok);
        assert!((v - c1() * (2.0 * PI * tau).sin()).abs() < 1e-8, "{v}");
        let st = unsafe { pwc_melnikov_deriv(sys, PwcMelnikovMode::SimplifiedTraceFree, tau, &mut v, &mut err) };
        assert_eq!(st, PwcStatus::Ok);
        assert!((v - 2.0 * PI * c1() * (2.0 * PI * tau).cos()).abs() < 1e-6, "{v}");
    }
    unsafe { pwc_system_free(sys) };
}

#[test]
fn field_and_analysis() {
    let sys = ex1();
    let mut f = [0.0; 2];
    assert_eq!(unsafe { pwc_system_field(sys, 1, 0.5, -0.1, 0.0, 0.0, f.as_mut_ptr()) }, PwcStatus::Ok);
    assert_eq!(f, [-0.1 - 0.25, 0.5 - 0.5]);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { pwc_system_analyze_json(sys, &mut json) }, PwcStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(v["constants"]["k0"], 3.0);
    assert_eq!(v["report"]["scenario"], 1);
    unsafe {
        pwc_string_free(json);
        pwc_system_free(sys);
    }
}

#[test]
fn trajectory_handle_exposes_samples() {
    let sys = ex1();
    let mut tr = ptr::null_mut();
    assert_eq!(unsafe { pwc_integrate(sys, 0.0, 0.9, 0.0, 3.0, 0.0, &mut tr) }, PwcStatus::Ok);
    let n = unsafe { pwc_trajectory_len(tr) };
    assert!(n > 2);
    assert_eq!(unsafe { pwc_trajectory_event_count(tr) }, 1);
    let mut s = PwcSample::default();
    assert_eq!(unsafe { pwc_trajectory_sample(tr, 0, &mut s) }, PwcStatus::Ok);
    assert_eq!((s.t, s.x, s.y), (0.0, 0.9, 0.0));
    assert_eq!(unsafe { pwc_trajectory_sample(tr, n, &mut s) }, PwcStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe {
        pwc_trajectory_free(tr);
        pwc_system_free(sys);
    }
}

#[test]
fn error_codes() {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { pwc_system_builtin(ptr::null(), ptr::null(), &mut sys) }, PwcStatus::NullPointer);
    let bad = CString::new("[system]\nname = 1\n").unwrap();
    assert_eq!(unsafe { pwc_system_from_config(bad.as_ptr(), &mut sys) }, PwcStatus::Config);
    assert!(!last_error().is_empty());
    let unknown = CString::new("nope").unwrap();
    assert_eq!(unsafe { pwc_system_builtin(unknown.as_ptr(), ptr::null(), &mut sys) }, PwcStatus::InvalidArgument);
    let invalid = [0xffu8, 0];
    assert_eq!(
        unsafe { pwc_system_builtin(invalid.as_ptr().cast(), ptr::null(), &mut sys) },
        PwcStatus::InvalidUtf8
    );
    let (mut v, mut e) = (0.0, 0.0);
    assert_eq!(
        unsafe { pwc_melnikov(ptr::null(), PwcMelnikovMode::FullTrace, 0.0, &mut v, &mut e) },
        PwcStatus::NullPointer
    );
    unsafe {
        pwc_system_free(ptr::null_mut());
        pwc_string_free(ptr::null_mut());
        pwc_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn shadow_refuses_synthetic_violator() {
    let text = std::fs::read_to_string(crate_dir().join("../../configs/scenario4.cfg")).unwrap();
    let text = CString::new(text).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { pwc_system_from_config(text.as_ptr(), &mut sys) }, PwcStatus::Ok);
    let symbols = CString::new("111").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { pwc_shadow_json(sys, symbols.as_ptr(), 1e-3, 43.0, 0.05, &mut out) };
    assert_eq!(st, PwcStatus::Hypotheses, "{}", last_error());
    assert!(out.is_null());
    unsafe { pwc_system_free(sys) };
}

#[test]
fn shadow_glues_on_first_example() {
    let sys = ex1();
    let symbols = CString::new("111").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { pwc_shadow_json(sys, symbols.as_ptr(), 1e-3, 43.0, 0.05, &mut out) };
    assert_eq!(st, PwcStatus::Ok, "{}", last_error());
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    assert_eq!(v["verified"], true);
    unsafe {
        pwc_string_free(out);
        pwc_system_free(sys);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/pwchaos.h")).unwrap();
    for sym in [
        "typedef struct PwcSystem PwcSystem;",
        "typedef struct PwcTrajectory PwcTrajectory;",
        "PWC_STATUS_OK = 0",
        "PWC_STATUS_PANIC = 8",
        "pwc_last_error(void)",
        "pwc_version(void)",
        "pwc_string_free(",
        "pwc_system_from_config(",
        "pwc_system_builtin(",
        "pwc_system_free(",
        "pwc_system_field(",
        "pwc_system_analyze_json(",
        "pwc_melnikov(",
        "pwc_melnikov_deriv(",
        "pwc_integrate(",
        "pwc_trajectory_len(",
        "pwc_trajectory_event_count(",
        "pwc_trajectory_sample(",
        "pwc_trajectory_free(",
        "pwc_shadow_json(",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = profile_dir().join("libpwchaos_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <math.h>
#include <stdio.h>
#include "pwchaos.h"
int main(void) {
    PwcSystem *sys = NULL;
    if (pwc_system_builtin("ex1", NULL, &sys) != PWC_STATUS_OK) return 2;
    double v = 0.0, err = 0.0;
    if (pwc_melnikov(sys, PWC_MELNIKOV_MODE_SIMPLIFIED_TRACE_FREE, 0.25, &v, &err) != PWC_STATUS_OK) return 3;
    if (pwc_system_builtin("nope", NULL, &sys) != PWC_STATUS_INVALID_ARGUMENT) return 4;
    printf("%.12f %s\n", v, pwc_version());
    pwc_system_free(sys);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let v: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!((v - c1()).abs() < 1e-8);
    assert!(text.trim_end().ends_with(env!("CARGO_PKG_VERSION")));
}

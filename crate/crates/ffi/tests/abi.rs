use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use factorlab_ffi::*;

fn last_error() -> String {
    let p = fl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn ensemble_roundtrip_and_fit() {
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(fl_simulate_brownian(1.0, 32, 20_000, 5, &mut e), FlStatus::Ok);
        let (mut m, mut n) = (0usize, 0usize);
        assert_eq!(fl_ensemble_shape(e, &mut m, &mut n), FlStatus::Ok);
        assert_eq!((m, n), (20_000, 32));
        let mut buf = vec![0.0; m * (n + 1)];
        assert_eq!(fl_ensemble_copy_paths(e, buf.as_mut_ptr(), buf.len()), FlStatus::Ok);
        assert_eq!(fl_ensemble_copy_paths(e, buf.as_mut_ptr(), 3), FlStatus::BufferTooSmall);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("e.flpe").to_str().unwrap()).unwrap();
        assert_eq!(fl_ensemble_write_binary(e, path.as_ptr()), FlStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(fl_ensemble_read_binary(path.as_ptr(), &mut back), FlStatus::Ok);
        let mut again = vec![0.0; buf.len()];
        assert_eq!(fl_ensemble_copy_paths(back, again.as_mut_ptr(), again.len()), FlStatus::Ok);
        assert_eq!(buf, again);
        fl_ensemble_free(back);

        // F = B_T^2 has integrand 2 B_t
        let f: Vec<f64> = (0..m).map(|r| buf[r * (n + 1) + n].powi(2)).collect();
        let mut rep = ptr::null_mut();
        assert_eq!(fl_fit_representer(e, f.as_ptr(), f.len(), 8, 1, &mut rep), FlStatus::Ok);
        let (mut mean, mut count) = (0.0, 0usize);
        assert_eq!(fl_representer_info(rep, &mut mean, &mut count), FlStatus::Ok);
        assert_eq!(count, 16);
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        let mut coeffs = vec![0.0; count];
        assert_eq!(fl_representer_copy_coefficients(rep, coeffs.as_mut_ptr(), count), FlStatus::Ok);
        for b in 0..8 {
            assert!(coeffs[2 * b].abs() < 0.1 && (coeffs[2 * b + 1] - 2.0).abs() < 0.1, "{coeffs:?}");
        }
        let mut phi = vec![0.0; m * n];
        assert_eq!(fl_representer_evaluate(rep, e, phi.as_mut_ptr(), phi.len()), FlStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(fl_representer_to_json(rep, &mut json), FlStatus::Ok);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("coefficients"));
        fl_string_free(json);
        fl_representer_free(rep);
        fl_ensemble_free(e);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(fl_simulate_fbm(1.0, 16, 1.5, 10, 1, &mut e), FlStatus::InvalidArgument);
        assert!(last_error().contains("hurst") || last_error().contains("Hurst"), "{}", last_error());
        assert!(e.is_null());
        assert_eq!(fl_simulate_brownian(1.0, 16, 10, 1, ptr::null_mut()), FlStatus::NullPointer);
        assert_eq!(fl_ensemble_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()), FlStatus::NullPointer);
        let missing = CString::new("/nonexistent/dir/x.flpe").unwrap();
        assert_eq!(fl_ensemble_read_binary(missing.as_ptr(), &mut e), FlStatus::Io);

        let mut b = ptr::null_mut();
        assert_eq!(fl_simulate_brownian(1.0, 16, 500, 2, &mut b), FlStatus::Ok);
        let wrong = [0.0; 3];
        let mut rep = ptr::null_mut();
        assert_eq!(fl_fit_representer(b, wrong.as_ptr(), wrong.len(), 4, 1, &mut rep), FlStatus::InvalidArgument);
        fl_ensemble_free(b);
        fl_ensemble_free(ptr::null_mut());
        fl_representer_free(ptr::null_mut());
    }
}

#[test]
fn run_config_in_memory() {
    unsafe {
        let cfg = CString::new(r#"{"paths": 2000, "grid": {"steps": 32}, "suite": ["dupire"]}"#).unwrap();
        let (mut report, mut passed) = (ptr::null_mut(), false);
        assert_eq!(fl_run_config(cfg.as_ptr(), &mut report, &mut passed), FlStatus::Ok);
        assert!(passed);
        assert!(CStr::from_ptr(report).to_str().unwrap().contains("\"verdict\": \"pass\""));
        fl_string_free(report);

        let bad = CString::new(r#"{"driver": {"process": "stable", "gamma": 2.5}}"#).unwrap();
        assert_eq!(fl_run_config(bad.as_ptr(), &mut report, &mut passed), FlStatus::InvalidArgument);
        assert!(last_error().contains("driver.gamma"));
    }
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/factorlab.h")).unwrap();
    for name in [
        "FlStatus",
        "FlEnsemble",
        "FlRepresenter",
        "fl_last_error",
        "fl_simulate_brownian",
        "fl_fit_representer",
        "fl_representer_evaluate",
        "fl_run_config",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

/// Compiles a C program against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(cc.status.success());
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    // `cargo test` does not refresh the cdylib, so build it for this profile
    if let Ok(cargo) = std::env::var("CARGO") {
        let mut build = Command::new(cargo);
        build.args(["build", "--lib", "-p", "factorlab-ffi"]);
        if lib_dir.file_name().is_some_and(|p| p == "release") {
            build.arg("--release");
        }
        assert!(build.status().unwrap().success());
    }
    if !lib_dir.join("libfactorlab_ffi.so").exists() {
        eprintln!("shared library not built in {}; skipped", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "factorlab.h"
int main(void) {
    FlEnsemble *e = NULL;
    if (fl_simulate_brownian(1.0, 8, 100, 3, &e) != FL_STATUS_OK) return 1;
    size_t m = 0, n = 0;
    if (fl_ensemble_shape(e, &m, &n) != FL_STATUS_OK || m != 100 || n != 8) return 2;
    FlEnsemble *bad = NULL;
    if (fl_simulate_fbm(1.0, 8, 2.0, 10, 1, &bad) != FL_STATUS_INVALID_ARGUMENT) return 3;
    if (fl_last_error() == NULL) return 4;
    fl_ensemble_free(e);
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lfactorlab_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

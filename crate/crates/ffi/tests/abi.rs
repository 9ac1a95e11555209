use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use kzcoarse_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { kzc_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn scaling_handle_roundtrip() {
    let name = CString::new("ising-2+1d").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(kzc_scaling_model_new(name.as_ptr(), &mut m), KzcStatus::Ok);
        let mut g = 0.0;
        assert_eq!(kzc_growth_exponent(m, 1.0, &mut g), KzcStatus::Ok);
        assert!((g - 0.1855).abs() < 1e-12);

        let mut s = KzcKzScales::default();
        assert_eq!(kzc_kz_scales(m, 100.0, 1.0, &mut s), KzcStatus::Ok);
        // t_KZ = tau^(nu z / (1 + nu z)) with nu z = 0.629
        assert!((s.t_kz - 100f64.powf(0.629 / 1.629)).abs() < 1e-9);

        let mut f = 0.0;
        assert_eq!(kzc_eval_sweep(m, 0.0, 1.0, &mut f), KzcStatus::Ok);
        assert!(f > 0.0);
        assert_eq!(kzc_eval_stopped(m, 5.0, 2.0, &mut f), KzcStatus::Engine, "x_c unset");
        assert!(last_error().contains("x_c"));
        assert_eq!(kzc_scaling_model_set_x_c(m, 3.0), KzcStatus::Ok);
        assert_eq!(kzc_eval_stopped(m, 5.0, 2.0, &mut f), KzcStatus::Ok);
        assert!(f.is_finite() && f > 0.0);
        kzc_scaling_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let bad = CString::new("potts").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(kzc_scaling_model_new(bad.as_ptr(), &mut m), KzcStatus::InvalidArgument);
        assert!(m.is_null());
        assert!(last_error().contains("potts"));

        assert_eq!(kzc_growth_exponent(ptr::null(), 1.0, ptr::null_mut()), KzcStatus::NullPointer);
        let mut lat = ptr::null_mut();
        assert_eq!(kzc_ising_new(0, 8, 1, &mut lat), KzcStatus::InvalidArgument);

        // truncation keeps the terminator
        let mut tiny = [1 as std::ffi::c_char; 4];
        let n = kzc_last_error(tiny.as_mut_ptr(), tiny.len());
        assert!(n > 3);
        assert_eq!(tiny[3], 0);

        kzc_scaling_model_free(ptr::null_mut());
        kzc_ising_free(ptr::null_mut());
        kzc_tfim_ramp_free(ptr::null_mut());
    }
}

#[test]
fn ising_lattice_orders_at_low_temperature() {
    unsafe {
        let mut lat = ptr::null_mut();
        assert_eq!(kzc_ising_new(32, 32, 9, &mut lat), KzcStatus::Ok);
        let mut before = KzcIsingObservables::default();
        kzc_ising_observables(lat, &mut before);
        assert_eq!(kzc_ising_sweep(lat, 1.0, 200), KzcStatus::Ok);
        let mut after = KzcIsingObservables::default();
        kzc_ising_observables(lat, &mut after);
        assert!(after.defect_length > 2.0 * before.defect_length);
        assert!(after.energy_per_site < before.energy_per_site);

        let mut spins = vec![0i8; 1024];
        assert_eq!(kzc_ising_spins(lat, spins.as_mut_ptr(), 10), KzcStatus::BufferTooSmall);
        assert_eq!(kzc_ising_spins(lat, spins.as_mut_ptr(), spins.len()), KzcStatus::Ok);
        assert!(spins.iter().all(|&s| s == 1 || s == -1));
        let m = spins.iter().map(|&s| s as f64).sum::<f64>() / 1024.0;
        assert!((m - after.magnetization).abs() < 1e-12);
        kzc_ising_free(lat);
    }
}

#[test]
fn tfim_ramp_modes() {
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(kzc_tfim_ramp(100, 16.0, 1.0, &mut r), KzcStatus::Ok);
        let n = kzc_tfim_ramp_modes(r);
        assert_eq!(n, 50);
        let (mut k, mut p) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(kzc_tfim_ramp_modes_copy(r, k.as_mut_ptr(), p.as_mut_ptr(), n), KzcStatus::Ok);
        let mut density = 0.0;
        kzc_tfim_ramp_density(r, &mut density);
        let sum: f64 = p.iter().map(|x| 2.0 * x).sum::<f64>() / 100.0;
        assert!((sum - density).abs() < 1e-14);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        kzc_tfim_ramp_free(r);

        assert_eq!(kzc_tfim_ramp(100, -1.0, 1.0, &mut r), KzcStatus::InvalidArgument);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kzcoarse.h")).unwrap();
    for sym in ["kzc_last_error", "kzc_scaling_model_new", "kzc_ising_sweep", "kzc_tfim_ramp_modes_copy", "KZC_STATUS_PANIC"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

/// Compile and run a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let profile_dir: PathBuf = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libkzcoarse_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(format!("{manifest}/include"))
        .arg(format!("{manifest}/tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<String, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(String::from)
        .ok_or(())
}

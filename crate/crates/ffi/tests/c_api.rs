use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use shiftscan_ffi::*;

fn last_error() -> String {
    let p = ss_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn feature_count_and_errors() {
    let mut n = 0usize;
    assert_eq!(unsafe { ss_feature_count(4, 8, 2, &mut n) }, SsStatus::Ok);
    assert_eq!(n, 417);
    assert_eq!(
        unsafe { ss_feature_count(4, 8, 3, &mut n) },
        SsStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { ss_feature_count(4, 8, 2, ptr::null_mut()) },
        SsStatus::NullPointer
    );
    assert!(last_error().contains("out"));
}

#[test]
fn filter_bank_scatters_constant_image() {
    let mut bank = ptr::null_mut();
    assert_eq!(
        unsafe { ss_filter_bank_new(2, 4, 2, 32, 0, &mut bank) },
        SsStatus::Ok
    );
    let n = unsafe { ss_filter_bank_feature_count(bank) };
    assert_eq!(n, 1 + 2 * 4 + 16);
    let pixels = vec![100.0; 32 * 32];
    let mut out = vec![0.0; n];
    assert_eq!(
        unsafe { ss_scatter(bank, pixels.as_ptr(), 32, out.as_mut_ptr(), n) },
        SsStatus::Ok
    );
    assert!((out[0] - 100.0 * 1024.0).abs() < 1e-6);
    assert!(out[1..].iter().all(|v| v.abs() < 1e-6 * out[0]));
    assert_eq!(
        unsafe { ss_scatter(bank, pixels.as_ptr(), 32, out.as_mut_ptr(), n - 1) },
        SsStatus::DimensionMismatch
    );
    assert_eq!(
        unsafe { ss_scatter(bank, pixels.as_ptr(), 16, out.as_mut_ptr(), n) },
        SsStatus::DimensionMismatch
    );
    unsafe { ss_filter_bank_free(bank) };
    unsafe { ss_filter_bank_free(ptr::null_mut()) };
}

fn lcg(n: usize, seed: u64, shift: f64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 + shift
        })
        .collect()
}

#[test]
fn btest_through_c_abi() {
    let x = lcg(400 * 3, 1, 0.0);
    let y = lcg(400 * 3, 2, 0.5);
    let mut r = SsBTestResult::default();
    let st = unsafe {
        ss_btest(
            x.as_ptr(),
            400,
            y.as_ptr(),
            400,
            3,
            1.0,
            true,
            0.05,
            0,
            7,
            &mut r,
        )
    };
    assert_eq!(st, SsStatus::Ok);
    assert!(r.reject);
    assert_eq!(r.block_size, 20);
    let st = unsafe {
        ss_btest(
            x.as_ptr(),
            400,
            x.as_ptr(),
            400,
            3,
            0.0,
            true,
            0.05,
            0,
            7,
            &mut r,
        )
    };
    assert_eq!(st, SsStatus::Ok);
    assert_eq!(r.statistic, 0.0);
    assert!(!r.reject);
    let st = unsafe {
        ss_btest(
            x.as_ptr(),
            3,
            y.as_ptr(),
            3,
            3,
            1.0,
            true,
            0.05,
            0,
            7,
            &mut r,
        )
    };
    assert_eq!(st, SsStatus::InsufficientData);
}

#[test]
fn embedding_handle_round_trip() {
    let data = lcg(50 * 4, 3, 0.0);
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { ss_embedding_fit(data.as_ptr(), 50, 4, &mut model) },
        SsStatus::Ok
    );
    let mut coords = vec![0.0; 100];
    assert_eq!(
        unsafe { ss_embedding_project(model, data.as_ptr(), 50, 4, coords.as_mut_ptr()) },
        SsStatus::Ok
    );
    let mean_x: f64 = coords.iter().step_by(2).sum::<f64>() / 50.0;
    assert!(mean_x.abs() < 1e-9);
    assert_eq!(
        unsafe { ss_embedding_project(model, data.as_ptr(), 40, 5, coords.as_mut_ptr()) },
        SsStatus::DimensionMismatch
    );
    unsafe { ss_embedding_free(model) };
    let path = c"/nonexistent/model.json";
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { ss_embedding_load(path.as_ptr(), &mut loaded) },
        SsStatus::Io
    );
}

#[test]
fn metrics_through_c_abi() {
    let scores = [0.9, 0.55, 0.1, 0.45];
    let labels = [1u8, 0, 0, 1];
    let mut m = SsMetrics::default();
    assert_eq!(
        unsafe { ss_metrics(scores.as_ptr(), labels.as_ptr(), 4, 0.5, 1.0, &mut m) },
        SsStatus::Ok
    );
    assert_eq!(m.n, 4);
    assert!(m.accuracy.defined && m.accuracy.value == 0.5);
    assert_eq!(
        unsafe { ss_metrics(scores.as_ptr(), labels.as_ptr(), 4, 0.5, 0.5, &mut m) },
        SsStatus::Ok
    );
    assert_eq!(m.n, 2);
    assert_eq!(m.abstention_fraction, 0.5);
    assert!(!m.auc.defined || m.auc.value == 1.0);
    assert!(m.accuracy.value == 1.0);
    let bad = [1.5];
    assert_eq!(
        unsafe { ss_metrics(bad.as_ptr(), labels.as_ptr(), 1, 0.5, 1.0, &mut m) },
        SsStatus::InvalidArgument
    );
}

#[test]
fn header_compiles_and_links_from_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("shiftscan.h").exists());
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libshiftscan_ffi.a");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "shiftscan.h"
int main(void) {
    size_t n = 0;
    if (ss_feature_count(4, 8, 2, &n) != SS_STATUS_OK || n != 417) return 1;
    if (ss_feature_count(4, 8, 3, &n) != SS_STATUS_INVALID_ARGUMENT) return 2;
    if (ss_last_error_message() == NULL) return 3;
    SsFilterBank *bank = NULL;
    if (ss_filter_bank_new(1, 2, 1, 8, 0, &bank) != SS_STATUS_OK) return 4;
    ss_filter_bank_free(bank);
    printf("%s\n", ss_version());
    return 0;
}
"#,
    )
    .unwrap();
    if !lib.exists() {
        // header-only check when the static archive is not next to the test binary
        let st = Command::new("cc")
            .args(["-fsyntax-only", "-I"])
            .arg(&header_dir)
            .arg(&src)
            .status()
            .unwrap();
        assert!(st.success());
        return;
    }
    let exe = dir.path().join("smoke");
    let st = Command::new("cc")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C smoke program exited with {:?}",
        out.status
    );
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        env!("CARGO_PKG_VERSION")
    );
}

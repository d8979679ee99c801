use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use metershare_ffi::*;

fn last_error() -> String {
    let p = ms_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn engine() -> *mut MsEngine {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { ms_engine_new(3, 1, 11, &mut e) }, MsStatus::Ok);
    e
}

#[test]
fn arithmetic_round_trip() {
    let e = engine();
    unsafe {
        let (mut a, mut b, mut s, mut d, mut p) = (0, 0, 0, 0, 0);
        assert_eq!(ms_engine_input(e, 1234, &mut a), MsStatus::Ok);
        assert_eq!(ms_engine_input(e, 77, &mut b), MsStatus::Ok);
        assert_eq!(ms_engine_add(e, a, b, &mut s), MsStatus::Ok);
        assert_eq!(ms_engine_sub(e, b, a, &mut d), MsStatus::Ok);
        assert_eq!(ms_engine_mul(e, a, b, &mut p), MsStatus::Ok);
        let mut v = 0u64;
        assert_eq!(ms_engine_open(e, s, &mut v), MsStatus::Ok);
        assert_eq!(v, 1311);
        assert_eq!(ms_engine_open(e, d, &mut v), MsStatus::Ok);
        assert_eq!(v, ms_field_modulus() - 1157);
        assert_eq!(ms_engine_open(e, p, &mut v), MsStatus::Ok);
        assert_eq!(v, 95018);
        let (mut mults, mut rounds) = (0, 0);
        assert_eq!(ms_engine_counters(e, &mut mults, &mut rounds), MsStatus::Ok);
        assert_eq!(mults, 1);
        ms_engine_free(e);
    }
}

#[test]
fn equality_on_bits() {
    let e = engine();
    unsafe {
        let x = 0b1011_0010u64;
        let mut bits = Vec::new();
        for i in (0..8).rev() {
            let mut h = 0;
            assert_eq!(ms_engine_input(e, (x >> i) & 1, &mut h), MsStatus::Ok);
            bits.push(h);
        }
        for (y, want) in [(x, 1), (x ^ 4, 0), (0, 0)] {
            let (mut h, mut v) = (0, 0);
            assert_eq!(ms_engine_equals_public(e, bits.as_ptr(), bits.len(), y, &mut h), MsStatus::Ok);
            assert_eq!(ms_engine_open(e, h, &mut v), MsStatus::Ok);
            assert_eq!(v, want, "y = {y}");
        }
        let mut h = 0;
        assert_eq!(ms_engine_equals_public(e, bits.as_ptr(), bits.len(), 256, &mut h), MsStatus::InvalidArgument);
        ms_engine_free(e);
    }
}

#[test]
fn failures_map_to_status_codes() {
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(ms_engine_new(2, 1, 0, &mut e), MsStatus::InvalidParams);
        assert!(last_error().contains("n=2"));
        assert_eq!(ms_engine_new(3, 1, 0, ptr::null_mut()), MsStatus::NullPointer);

        let e = engine();
        let mut out = 0;
        assert_eq!(ms_engine_add(e, 0, 1, &mut out), MsStatus::UnknownHandle);
        let (mut a, mut b) = (0, 0);
        ms_engine_input(e, 5, &mut a);
        ms_engine_input(e, 6, &mut b);
        assert_eq!(ms_engine_fail_party(e, 9), MsStatus::InvalidArgument);
        assert_eq!(ms_engine_fail_party(e, 2), MsStatus::Ok);
        let mut v = 0;
        assert_eq!(ms_engine_open(e, a, &mut v), MsStatus::Ok);
        assert_eq!(v, 5);
        assert_eq!(ms_engine_mul(e, a, b, &mut out), MsStatus::InsufficientParties);
        assert_eq!(ms_engine_fail_party(e, 3), MsStatus::Ok);
        assert_eq!(ms_engine_open(e, a, &mut v), MsStatus::InsufficientShares);
        ms_engine_free(e);
        ms_engine_free(ptr::null_mut());
    }
}

const SCENARIO: &str = r#"
n_servers = 3
threshold = 1
n_dno = 2
n_suppliers = 3
sigma = 8
sm_per_region = [6, 5]
seed = 3
fault_rate = 0.0
algorithm = "niaa"
byte_accounting = "paper"
"#;

#[test]
fn scenario_run_exposes_matrix() {
    unsafe {
        let toml = CString::new(SCENARIO).unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(ms_run_scenario(toml.as_ptr(), 1, &mut r), MsStatus::Ok);
        assert_eq!(ms_run_matches_oracle(r), 1);
        let (mut nd, mut ns) = (0, 0);
        assert_eq!(ms_run_shape(r, &mut nd, &mut ns), MsStatus::Ok);
        assert_eq!((nd, ns), (2, 3));
        let mut csv = ptr::null_mut();
        assert_eq!(ms_run_matrix_csv(r, &mut csv), MsStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        ms_string_free(csv);
        assert!(text.starts_with("region,supplier,imp,exp\n"));
        let (mut imp, mut exp) = (0, 0);
        assert_eq!(ms_run_cell(r, 2, 3, &mut imp, &mut exp), MsStatus::Ok);
        assert!(text.contains(&format!("2,3,{imp},{exp}")));
        assert_eq!(ms_run_cell(r, 3, 1, &mut imp, &mut exp), MsStatus::InvalidArgument);
        ms_run_free(r);

        let bad = CString::new(SCENARIO.replace("n_suppliers = 3", "n_suppliers = 0")).unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(ms_run_scenario(bad.as_ptr(), 1, &mut r), MsStatus::InvalidScenario);
        assert!(r.is_null());
    }
}

#[test]
fn cost_formulas() {
    unsafe {
        let mut p = ms_cost_params_default();
        p.m = 2_200_000;
        let mut v = 0.0;
        assert_eq!(ms_formula_mults(MsAlgorithm::Naa, &p, &mut v), MsStatus::Ok);
        assert_eq!(v, 1.98e8);
        assert_eq!(ms_formula_comm(MsProtocol::Trad, MsSegment::SmsToDcc, &p, &mut v), MsStatus::Ok);
        assert_eq!(v, 896.0 * 2_200_000.0);
        p.threads = 8;
        assert_eq!(ms_extrapolate_cpu(1.98e8, &p, &mut v), MsStatus::Ok);
        assert!((v - 514.8).abs() < 1e-6);
        p.threads = 0;
        assert_eq!(ms_formula_mults(MsAlgorithm::Ncaa, &p, &mut v), MsStatus::InvalidParams);
        assert_eq!(ms_formula_mults(MsAlgorithm::Niaa, ptr::null(), &mut v), MsStatus::NullPointer);
    }
}

fn which(tool: &str) -> bool {
    Command::new(tool).arg("--version").output().is_ok()
}

#[test]
fn header_drives_the_static_library_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("metershare.h").exists());
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = lib_dir.join("libmetershare_ffi.a");
    if !which("cc") || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("capi");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "42 1");
}

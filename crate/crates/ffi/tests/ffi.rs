use std::ffi::{CStr, CString};
use std::ptr;

use equinox_ffi::*;

fn last_error() -> String {
    let p = eqx_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    eqx_string_free(p);
    s
}

fn generate(preset: &str, duration: f64, seed: u64) -> *mut EqxTrace {
    let name = CString::new(preset).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { eqx_trace_generate(name.as_ptr(), duration, seed, &mut t) }, EqxStatus::Ok);
    t
}

#[test]
fn trace_generate_and_hash_are_deterministic() {
    let a = generate("balanced", 10.0, 1);
    let b = generate("balanced", 10.0, 1);
    unsafe {
        let mut n = 0usize;
        assert_eq!(eqx_trace_len(a, &mut n), EqxStatus::Ok);
        assert!(n > 0);
        let (mut ha, mut hb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(eqx_trace_hash(a, &mut ha), EqxStatus::Ok);
        assert_eq!(eqx_trace_hash(b, &mut hb), EqxStatus::Ok);
        let (ha, hb) = (take_string(ha), take_string(hb));
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 64);
        eqx_trace_free(a);
        eqx_trace_free(b);
    }
}

#[test]
fn unknown_preset_is_config_error() {
    let name = CString::new("nope").unwrap();
    let mut t = ptr::null_mut();
    let status = unsafe { eqx_trace_generate(name.as_ptr(), 10.0, 1, &mut t) };
    assert_eq!(status, EqxStatus::InvalidConfig);
    assert!(last_error().contains("preset"));
    assert!(t.is_null());
}

#[test]
fn null_arguments_are_rejected() {
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { eqx_trace_generate(ptr::null(), 1.0, 1, &mut t) }, EqxStatus::NullPointer);
    assert!(last_error().contains("preset"));
    let mut n = 0usize;
    assert_eq!(unsafe { eqx_trace_len(ptr::null(), &mut n) }, EqxStatus::NullPointer);
    // Freeing null is a no-op.
    unsafe {
        eqx_trace_free(ptr::null_mut());
        eqx_report_free(ptr::null_mut());
        eqx_profile_free(ptr::null_mut());
        eqx_string_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    let mut t = ptr::null_mut();
    let _ = unsafe { eqx_trace_generate(ptr::null(), 1.0, 1, &mut t) };
    assert!(!eqx_last_error().is_null());
    let t = generate("poisson", 1.0, 1);
    assert!(eqx_last_error().is_null());
    unsafe { eqx_trace_free(t) };
}

#[test]
fn simulate_returns_summary_and_json() {
    let t = generate("balanced", 20.0, 3);
    let spec = CString::new(r#"{"policy":{"kind":"equinox"},"predictor":{"kind":"oracle"}}"#).unwrap();
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(eqx_simulate(t, spec.as_ptr(), 3, &mut r), EqxStatus::Ok, "{:?}", eqx_last_error());
        let mut s = EqxSummary::default();
        assert_eq!(eqx_report_summary(r, &mut s), EqxStatus::Ok);
        assert!(s.completed > 0);
        assert!(s.throughput > 0.0);
        assert!((0.5..=1.0).contains(&s.jain_hf));
        let mut j = ptr::null_mut();
        assert_eq!(eqx_report_json(r, &mut j), EqxStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take_string(j)).unwrap();
        assert_eq!(v["completed"].as_u64(), Some(s.completed));
        assert_eq!(v["policy"], "equinox");
        eqx_report_free(r);
        eqx_trace_free(t);
    }
}

#[test]
fn simulate_with_null_spec_uses_defaults() {
    let t = generate("poisson", 5.0, 1);
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(eqx_simulate(t, ptr::null(), 1, &mut r), EqxStatus::Ok);
        eqx_report_free(r);
        eqx_trace_free(t);
    }
}

#[test]
fn invalid_alpha_names_field() {
    let t = generate("poisson", 5.0, 1);
    let spec = CString::new(r#"{"policy":{"kind":"equinox","alpha":1.2}}"#).unwrap();
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(eqx_simulate(t, spec.as_ptr(), 1, &mut r), EqxStatus::InvalidConfig);
        assert!(last_error().contains("`alpha`"), "{}", last_error());
        assert!(r.is_null());
        eqx_trace_free(t);
    }
}

#[test]
fn unknown_spec_key_names_field() {
    let t = generate("poisson", 5.0, 1);
    let spec = CString::new(r#"{"colour":"red"}"#).unwrap();
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(eqx_simulate(t, spec.as_ptr(), 1, &mut r), EqxStatus::InvalidConfig);
        assert!(last_error().contains("colour"));
        eqx_trace_free(t);
    }
}

#[test]
fn run_config_matches_simulate_on_same_trace() {
    let cfg = CString::new(
        r#"{"scenario":{"preset":"balanced","duration_s":10},"policy":{"kind":"vtc"},"predictor":{"kind":"oracle"}}"#,
    )
    .unwrap();
    let spec = CString::new(r#"{"policy":{"kind":"vtc"},"predictor":{"kind":"oracle"}}"#).unwrap();
    let t = generate("balanced", 10.0, 4);
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(eqx_run_config(cfg.as_ptr(), 4, &mut a), EqxStatus::Ok);
        assert_eq!(eqx_simulate(t, spec.as_ptr(), 4, &mut b), EqxStatus::Ok);
        let (mut ja, mut jb) = (ptr::null_mut(), ptr::null_mut());
        eqx_report_json(a, &mut ja);
        eqx_report_json(b, &mut jb);
        assert_eq!(take_string(ja), take_string(jb));
        eqx_report_free(a);
        eqx_report_free(b);
        eqx_trace_free(t);
    }
}

#[test]
fn trace_parse_roundtrip_and_bad_row() {
    let csv = "client_id,arrival_time_s,input_tokens,output_tokens,category_tag\na,0.5,10,20,0\nb,1.0,5,7,1\n";
    let c = CString::new(csv).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(eqx_trace_parse(c.as_ptr(), &mut t), EqxStatus::Ok, "{}", last_error());
        let mut n = 0usize;
        eqx_trace_len(t, &mut n);
        assert_eq!(n, 2);
        eqx_trace_free(t);

        let bad = CString::new("client_id,arrival_time_s,input_tokens,output_tokens,category_tag\na,x,10,20,0\n").unwrap();
        let mut t = ptr::null_mut();
        assert_ne!(eqx_trace_parse(bad.as_ptr(), &mut t), EqxStatus::Ok);
        assert!(last_error().contains(":2:"), "{}", last_error());
    }
}

#[test]
fn jain_index_examples() {
    let mut out = 0.0;
    let xs = [1.0, 1.0, 1.0, 1.0];
    assert_eq!(unsafe { eqx_jain_index(xs.as_ptr(), xs.len(), &mut out) }, EqxStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
    let xs = [1.0, 0.0, 0.0, 0.0];
    assert_eq!(unsafe { eqx_jain_index(xs.as_ptr(), xs.len(), &mut out) }, EqxStatus::Ok);
    assert!((out - 0.25).abs() < 1e-12);
    assert_eq!(unsafe { eqx_jain_index(xs.as_ptr(), 0, &mut out) }, EqxStatus::Runtime);
}

#[test]
fn profile_build_and_csv() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(eqx_profile_build(ptr::null(), &mut p), EqxStatus::Ok);
        let mut n = 0usize;
        eqx_profile_len(p, &mut n);
        let mut s = ptr::null_mut();
        assert_eq!(eqx_profile_csv(p, &mut s), EqxStatus::Ok);
        let csv = take_string(s);
        assert!(csv.starts_with("bucket_upper,latency_ms,gpu_util,tps"));
        assert_eq!(csv.lines().count(), n + 1);
        eqx_profile_free(p);

        let bad = CString::new(r#"{"max_batch":0}"#).unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(eqx_profile_build(bad.as_ptr(), &mut p), EqxStatus::InvalidConfig);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/equinox.h")).unwrap();
    for name in [
        "eqx_last_error",
        "eqx_string_free",
        "eqx_trace_generate",
        "eqx_trace_load",
        "eqx_trace_parse",
        "eqx_trace_len",
        "eqx_trace_hash",
        "eqx_trace_free",
        "eqx_simulate",
        "eqx_run_config",
        "eqx_report_json",
        "eqx_report_summary",
        "eqx_report_free",
        "eqx_jain_index",
        "eqx_profile_build",
        "eqx_profile_len",
        "eqx_profile_csv",
        "eqx_profile_free",
    ] {
        assert!(header.contains(&format!("{name}(")), "header lacks {name}");
    }
}

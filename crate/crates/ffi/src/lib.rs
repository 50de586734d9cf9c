//! C ABI for the Equinox simulator.
//!
//! Conventions:
//! - every fallible function returns an [`EqxStatus`] and writes results
//!   through out-pointers;
//! - objects are opaque handles released with their `*_free` function;
//! - strings returned to the caller are NUL-terminated, owned by the caller
//!   and released with [`eqx_string_free`];
//! - on failure, [`eqx_last_error`] returns a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;

use equinox_core::config::{PredictorSpec, RunConfig, ScenarioSpec};
use equinox_core::engine::EngineOptions;
use equinox_core::experiment::simulate;
use equinox_core::gpu_model::build_profile;
use equinox_core::workload::{generate_scenario, load_trace, read_trace};
use equinox_core::{jain_index, Error, GpuProfile, PerfParams, PolicySpec, ScenarioName, SimReport, Trace};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqxStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid configuration or argument; the message names the field.
    InvalidConfig = 2,
    Io = 3,
    InvalidUtf8 = 4,
    /// Simulation or metric failure.
    Runtime = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// A workload trace.
pub struct EqxTrace(Trace);

/// The report of one simulation.
pub struct EqxReport(SimReport);

/// A solo-run GPU profile.
pub struct EqxProfile(GpuProfile);

/// Headline numbers of a report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EqxSummary {
    pub completed: u64,
    pub rejected: u64,
    pub duration_s: f64,
    pub throughput: f64,
    pub mean_util: f64,
    pub jain_hf: f64,
    pub jain_ttft_p90: f64,
    /// Service-difference statistics; zero when undefined (fewer than two clients).
    pub max_diff: f64,
    pub avg_diff: f64,
    pub var_diff: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(EqxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } => EqxStatus::InvalidConfig,
            Error::Io { .. } | Error::TraceRow { .. } => EqxStatus::Io,
            _ => EqxStatus::Runtime,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EqxStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EqxStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic in equinox");
            EqxStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(EqxStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EqxStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(EqxStatus::Runtime, "string contains NUL".into()))
}

fn json_config<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, Fail> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).unwrap_or("config").to_string();
        Error::config(field, msg).into()
    })
}

/// Message describing the last failure on this thread, or null. The
/// pointer stays valid until the next `eqx_*` call on the same thread.
#[no_mangle]
pub extern "C" fn eqx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn eqx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generate a preset workload (`balanced`, `poisson`, `overload`, ...).
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_trace_generate(
    preset: *const c_char,
    duration_s: f64,
    seed: u64,
    out: *mut *mut EqxTrace,
) -> EqxStatus {
    guard(|| {
        let name: ScenarioName = str_arg(preset, "preset")?.parse().map_err(Fail::from)?;
        let trace = generate_scenario(name, seed, duration_s)?;
        write_out(out, Box::into_raw(Box::new(EqxTrace(trace))), "out")
    })
}

/// Load a CSV trace from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_trace_load(path: *const c_char, out: *mut *mut EqxTrace) -> EqxStatus {
    guard(|| {
        let trace = load_trace(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(EqxTrace(trace))), "out")
    })
}

/// Parse a CSV trace held in memory.
///
/// # Safety
/// `csv` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_trace_parse(csv: *const c_char, out: *mut *mut EqxTrace) -> EqxStatus {
    guard(|| {
        let text = str_arg(csv, "csv")?;
        let trace = read_trace(text.as_bytes(), std::path::Path::new("<memory>"))?;
        write_out(out, Box::into_raw(Box::new(EqxTrace(trace))), "out")
    })
}

/// Number of requests in the trace.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_trace_len(trace: *const EqxTrace, out: *mut usize) -> EqxStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        write_out(out, t.0.requests.len(), "out")
    })
}

/// Hex SHA-256 content hash of the trace. Free with `eqx_string_free`.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_trace_hash(trace: *const EqxTrace, out: *mut *mut c_char) -> EqxStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        write_out(out, c_string(t.0.content_hash())?, "out")
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eqx_trace_free(trace: *mut EqxTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Settings for simulating a caller-supplied trace: a run configuration
/// without the scenario and orchestration keys.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SimSpec {
    policy: PolicySpec,
    predictor: PredictorSpec,
    perf: PerfParams,
    engine: EngineOptions,
}

fn run_on(trace: &Trace, cfg: &RunConfig, seed: u64) -> Result<SimReport, Fail> {
    let predictor = cfg.predictor.prepare()?;
    let run = simulate(cfg, &cfg.policy, &predictor, &cfg.predictor.label(), trace, seed)?;
    Ok(run.report)
}

/// Simulate `trace`. `spec_json` holds optional `policy`, `predictor`,
/// `perf` and `engine` objects (same schema as the run config); null means
/// all defaults. `seed` drives predictor noise only.
///
/// # Safety
/// `trace` must be a live handle, `spec_json` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_simulate(
    trace: *const EqxTrace,
    spec_json: *const c_char,
    seed: u64,
    out: *mut *mut EqxReport,
) -> EqxStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        let spec: SimSpec = match opt_str_arg(spec_json, "spec_json")? {
            Some(text) => json_config(text)?,
            None => SimSpec::default(),
        };
        // The scenario is unused: the caller supplies the trace.
        let mut cfg = RunConfig::new(ScenarioSpec::preset(ScenarioName::Balanced, 1.0));
        cfg.policy = spec.policy;
        cfg.predictor = spec.predictor;
        cfg.perf = spec.perf;
        cfg.engine = spec.engine;
        cfg.validate()?;
        let report = run_on(&t.0, &cfg, seed)?;
        write_out(out, Box::into_raw(Box::new(EqxReport(report))), "out")
    })
}

/// Run a full JSON run configuration for one seed (the config's seed list
/// is ignored).
///
/// # Safety
/// `config_json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_run_config(config_json: *const c_char, seed: u64, out: *mut *mut EqxReport) -> EqxStatus {
    guard(|| {
        let cfg = RunConfig::from_json(str_arg(config_json, "config_json")?)?;
        let trace = cfg.scenario.materialize(seed)?;
        let report = run_on(&trace, &cfg, seed)?;
        write_out(out, Box::into_raw(Box::new(EqxReport(report))), "out")
    })
}

/// Full report as JSON. Free with `eqx_string_free`.
///
/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_report_json(report: *const EqxReport, out: *mut *mut c_char) -> EqxStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let json = serde_json::to_string(&r.0).map_err(Error::from)?;
        write_out(out, c_string(json)?, "out")
    })
}

/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_report_summary(report: *const EqxReport, out: *mut EqxSummary) -> EqxStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.0;
        let d = r.service_difference.as_ref();
        let s = EqxSummary {
            completed: r.completed as u64,
            rejected: r.rejected,
            duration_s: r.duration_s,
            throughput: r.throughput,
            mean_util: r.mean_util,
            jain_hf: r.jain_hf,
            jain_ttft_p90: r.jain_ttft_p90,
            max_diff: d.map_or(0.0, |d| d.max),
            avg_diff: d.map_or(0.0, |d| d.avg),
            var_diff: d.map_or(0.0, |d| d.var),
        };
        write_out(out, s, "out")
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eqx_report_free(report: *mut EqxReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Jain's fairness index of `len` values.
///
/// # Safety
/// `values` must point to `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_jain_index(values: *const f64, len: usize, out: *mut f64) -> EqxStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let xs = std::slice::from_raw_parts(values, len);
        write_out(out, jain_index(xs)?, "out")
    })
}

/// Build the solo-run profile. `perf_json` is a perf-params object or null
/// for defaults; bucket bounds and reference input come from engine defaults.
///
/// # Safety
/// `perf_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_profile_build(perf_json: *const c_char, out: *mut *mut EqxProfile) -> EqxStatus {
    guard(|| {
        let perf: PerfParams = match opt_str_arg(perf_json, "perf_json")? {
            Some(text) => json_config(text)?,
            None => PerfParams::default(),
        };
        perf.validate()?;
        let opts = EngineOptions::default();
        let profile = build_profile(&perf, &opts.profile_bounds, opts.reference_input_tokens)?;
        write_out(out, Box::into_raw(Box::new(EqxProfile(profile))), "out")
    })
}

/// Number of output-length buckets in the profile.
///
/// # Safety
/// `profile` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_profile_len(profile: *const EqxProfile, out: *mut usize) -> EqxStatus {
    guard(|| {
        let p = profile.as_ref().ok_or_else(|| null("profile"))?;
        write_out(out, p.0.entries.len(), "out")
    })
}

/// Profile as CSV (`bucket_upper,latency_ms,gpu_util,tps`). Free with `eqx_string_free`.
///
/// # Safety
/// `profile` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eqx_profile_csv(profile: *const EqxProfile, out: *mut *mut c_char) -> EqxStatus {
    guard(|| {
        let p = profile.as_ref().ok_or_else(|| null("profile"))?;
        let mut buf = Vec::new();
        p.0.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| Fail(EqxStatus::Runtime, e.to_string()))?;
        write_out(out, c_string(text)?, "out")
    })
}

/// # Safety
/// `profile` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eqx_profile_free(profile: *mut EqxProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

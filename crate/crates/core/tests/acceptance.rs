//! Acceptance checks, one PASS/FAIL line each.
//!
//! Runs every check even when an earlier one fails and exits non-zero if
//! any failed. Every simulation goes through [`Audit`], which replays it,
//! compares event logs byte for byte, checks token conservation and the
//! memory bound, and recomputes each reported Jain index from raw values.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use equinox_core::config::{PredictorSpec, RunConfig, ScenarioSpec};
use equinox_core::engine::{run_with_profile, EngineOptions, EventKind, EventLog, LogEvent, SimOutput};
use equinox_core::experiment::sweep_alpha;
use equinox_core::gpu_model::{build_profile, GpuProfile};
use equinox_core::metrics::{build_report, service_totals};
use equinox_core::predictor::{train_mope, MopeTraining, PredictionRecord};
use equinox_core::scheduler::{
    holistic_score, rfc_increment, ufc_increment, ClientState, NormMode, RfcMode, ScheduleContext, VtcCharge,
};
use equinox_core::workload::{generate_corpus, generate_scenario, CorpusSpec};
use equinox_core::{
    jain_index, EngineConfig, EquinoxParams, PerfParams, PolicySpec, Predictor, Request, ScenarioName, SimReport,
    Trace, VtcParams,
};

const JAIN_EPS: f64 = 1e-12;

/// Raw Jain formula, no clamping.
fn jain_raw(xs: &[f64]) -> f64 {
    let s: f64 = xs.iter().sum();
    let q: f64 = xs.iter().map(|x| x * x).sum();
    if q == 0.0 {
        1.0
    } else {
        s * s / (xs.len() as f64 * q)
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn weights_of(trace: &Trace) -> BTreeMap<String, f64> {
    let mut w: BTreeMap<String, f64> = trace.clients.iter().map(|c| (c.client_id.clone(), c.weight)).collect();
    for r in &trace.requests {
        w.entry(r.client_id.clone()).or_insert(1.0);
    }
    w
}

#[derive(Default)]
struct Audit {
    runs: usize,
    nondeterministic: Vec<String>,
    conservation: Vec<String>,
    jain_values: usize,
    jain: Vec<String>,
    /// Solo-run profiles keyed by perf params; building one dominates short runs.
    profiles: HashMap<String, GpuProfile>,
}

impl Audit {
    /// Run, replay and check one simulation.
    fn simulate(&mut self, label: &str, trace: &Trace, cfg: &EngineConfig, pred: &Predictor) -> (SimOutput, SimReport) {
        let key = serde_json::to_string(&(&cfg.perf, &cfg.options.profile_bounds, cfg.options.reference_input_tokens)).unwrap();
        let profile = self
            .profiles
            .entry(key)
            .or_insert_with(|| build_profile(&cfg.perf, &cfg.options.profile_bounds, cfg.options.reference_input_tokens).unwrap())
            .clone();
        let out = run_with_profile(trace, cfg, pred, profile.clone()).unwrap_or_else(|e| panic!("{label}: {e}"));
        let again = run_with_profile(trace, cfg, pred, profile).unwrap_or_else(|e| panic!("{label}: {e}"));
        let report = build_report(&out, cfg, &weights_of(trace), pred.name()).expect("report");
        self.check(label, trace, cfg, &out, &again.log, &report);
        (out, report)
    }

    fn check(&mut self, label: &str, trace: &Trace, cfg: &EngineConfig, out: &SimOutput, replay: &EventLog, report: &SimReport) {
        self.runs += 1;
        if out.log.to_ndjson().unwrap() != replay.to_ndjson().unwrap() {
            self.nondeterministic.push(label.to_string());
        }
        self.check_conservation(label, trace, out, report);
        self.check_jain(label, cfg, out, report);
    }

    fn check_conservation(&mut self, label: &str, trace: &Trace, out: &SimOutput, report: &SimReport) {
        let reqs: HashMap<u64, &Request> = trace.requests.iter().map(|r| (r.id, r)).collect();
        let mut admitted: HashMap<u64, u32> = HashMap::new();
        let mut finished: HashMap<u64, u32> = HashMap::new();
        let mut tokens = 0u64;
        let mut problems = Vec::new();
        for e in &out.log.events {
            let Some(r) = reqs.get(&e.request_id) else {
                problems.push(format!("unknown request {}", e.request_id));
                continue;
            };
            match e.event {
                EventKind::Admitted => *admitted.entry(e.request_id).or_default() += 1,
                EventKind::Completed => {
                    *finished.entry(e.request_id).or_default() += 1;
                    if admitted.get(&e.request_id).copied().unwrap_or(0) != 1 {
                        problems.push(format!("request {} completed without a single admission", r.id));
                    }
                    if e.output_tokens != Some(r.true_output_tokens) || e.input_tokens != Some(r.input_tokens) {
                        problems.push(format!("request {} completed with wrong token counts", r.id));
                    }
                    tokens += r.true_output_tokens as u64;
                }
                EventKind::Rejected => *finished.entry(e.request_id).or_default() += 1,
                _ => {}
            }
        }
        if finished.values().any(|&n| n > 1) {
            problems.push("request finished twice".into());
        }
        if tokens != report.completed_tokens {
            problems.push(format!("completed tokens {} != report {}", tokens, report.completed_tokens));
        }
        if out.stats.max_resident_tokens > out.stats.capacity_tokens {
            problems.push(format!(
                "resident tokens {} exceed capacity {}",
                out.stats.max_resident_tokens, out.stats.capacity_tokens
            ));
        }
        for p in problems {
            self.conservation.push(format!("{label}: {p}"));
        }
    }

    fn check_jain(&mut self, label: &str, cfg: &EngineConfig, out: &SimOutput, report: &SimReport) {
        let n = report.clients.len();
        let mut checks: Vec<(&str, f64, Option<f64>, usize)> = Vec::new();

        // HF from the final ledgers.
        let pool: Vec<&ClientState> = out.clients.iter().collect();
        let hf: Vec<f64> = out.clients.iter().map(|c| holistic_score(c, &pool, cfg.ledger_params())).collect();
        checks.push(("jain_hf", report.jain_hf, Some(jain_raw(&hf)), n));

        // p90 TTFT per client, nearest rank.
        let arrivals: HashMap<u64, f64> =
            out.log.events.iter().filter(|e| e.event == EventKind::Arrived).map(|e| (e.request_id, e.time)).collect();
        let mut ttft: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for e in out.log.events.iter().filter(|e| e.event == EventKind::FirstToken) {
            ttft.entry(e.client_id.as_str()).or_default().push(e.time - arrivals[&e.request_id]);
        }
        let p90: Vec<f64> = ttft
            .values_mut()
            .map(|v| {
                v.sort_by(f64::total_cmp);
                nearest_rank(v, 90.0)
            })
            .collect();
        if !p90.is_empty() {
            checks.push(("jain_ttft_p90", report.jain_ttft_p90, Some(jain_raw(&p90)), p90.len()));
        }

        let weights: BTreeMap<String, f64> = out.clients.iter().map(|c| (c.client_id.clone(), c.weight)).collect();
        let mut service: BTreeMap<&str, f64> = weights.keys().map(|c| (c.as_str(), 0.0)).collect();
        let ow = cfg.ledger_params().output_weight;
        for e in out.log.events.iter().filter(|e| e.event == EventKind::Completed) {
            *service.get_mut(e.client_id.as_str()).unwrap() += weights[&e.client_id]
                * (e.input_tokens.unwrap() as f64 + ow * e.output_tokens.unwrap() as f64);
        }
        let service: Vec<f64> = service.into_values().collect();
        checks.push(("jain_service", report.jain_service, Some(jain_raw(&service)), n));

        for &(_, j) in &report.jain_hf_series {
            checks.push(("jain_hf_series", j, None, n));
        }

        for (name, reported, raw, m) in checks {
            self.jain_values += 1;
            let lo = 1.0 / m as f64;
            if !(reported >= lo - JAIN_EPS && reported <= 1.0 + JAIN_EPS) {
                self.jain.push(format!("{label}: {name}={reported} outside [1/{m}, 1]"));
            }
            if let Some(raw) = raw {
                if !(raw >= lo - JAIN_EPS && raw <= 1.0 + JAIN_EPS) || (raw - reported).abs() > 1e-9 {
                    self.jain.push(format!("{label}: {name} reported {reported}, recomputed {raw}"));
                }
            }
        }
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------

fn formula_fidelity() -> Outcome {
    let tol = 1e-9;
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if !rel_close(got, want, tol) {
            failures.push(format!("{name}: got {got}, want {want}"));
        }
    };
    let params = EquinoxParams::default();
    let req = Request {
        id: 0,
        client_id: "c1".into(),
        arrival_time: 0.0,
        input_tokens: 100,
        true_output_tokens: 400,
        category_tag: None,
    };
    let pred = |latency_ms: f64, tps: f64, util: f64| PredictionRecord {
        predicted_output_tokens: 400,
        predicted_latency_ms: latency_ms,
        predicted_gpu_util: util,
        predicted_tps: tps,
    };
    // 1 * (100 + 4*400) / (1 + 0.1*0) and the same over (1 + 0.1*(5 + 5)).
    check("ufc no wait", ufc_increment(&req, &ScheduleContext::new(0.0, &req, pred(0.0, 0.0, 0.0)), 1.0, &params), 1700.0);
    check("ufc wait 5s + 5s", ufc_increment(&req, &ScheduleContext::new(5.0, &req, pred(5000.0, 0.0, 0.0)), 1.0, &params), 850.0);
    check("rfc", rfc_increment(&pred(0.0, 1000.0, 0.9), 1.0), 900.0);
    check("rfc weight 2", rfc_increment(&pred(0.0, 1000.0, 0.9), 2.0), 1800.0);
    check("rfc zero util", rfc_increment(&pred(0.0, 1000.0, 0.0), 1.0) + 1.0, 1.0);

    let mut a = ClientState::new("a", 1.0);
    let mut b = ClientState::new("b", 1.0);
    (a.ufc, a.rfc, b.ufc, b.rfc) = (1000.0, 100.0, 500.0, 100.0);
    let pool = [&a, &b];
    check("hf a", holistic_score(&a, &pool, &params), 0.7 * 1.0 + 0.3 * 1.0);
    check("hf b", holistic_score(&b, &pool, &params), 0.7 * 0.5 + 0.3 * 1.0);

    check("jain (4,4,4,4)", jain_index(&[4.0; 4]).unwrap(), 1.0);
    check("jain (1,0)", jain_index(&[1.0, 0.0]).unwrap(), 0.5);
    check("jain (1,2,3)", jain_index(&[1.0, 2.0, 3.0]).unwrap(), 36.0 / 42.0);

    let n = 10;
    outcome(failures.is_empty(), if failures.is_empty() { format!("{n} values within 1e-9 relative") } else { failures.join("; ") })
}

/// Random 2-4 client traces with at most 50 requests each.
fn micro_trace(seed: u64) -> (Trace, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients = rng.random_range(2..=4usize);
    let n = rng.random_range(clients..=50usize);
    let mut arrivals: Vec<(f64, usize)> = (0..n)
        .map(|i| (rng.random_range(0.0..1.0), if i < clients { i } else { rng.random_range(0..clients) }))
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let requests = arrivals
        .into_iter()
        .enumerate()
        .map(|(i, (t, c))| Request {
            id: i as u64,
            client_id: format!("c{c}"),
            arrival_time: t,
            input_tokens: rng.random_range(1..=128),
            true_output_tokens: rng.random_range(1..=64),
            category_tag: None,
        })
        .collect();
    let max_batch = rng.random_range(1..=4usize);
    (Trace { requests, clients: Vec::new(), duration: 1.0, warnings: Vec::new() }, max_batch)
}

fn vtc_reduction(audit: &mut Audit) -> Outcome {
    let equinox = PolicySpec::Equinox(EquinoxParams {
        alpha: 1.0,
        beta: 0.0,
        delta: 0.0,
        output_weight: 4.0,
        norm_mode: NormMode::None,
        ..EquinoxParams::default()
    });
    let vtc = PolicySpec::Vtc(VtcParams { input_weight: 1.0, output_weight: 4.0, charge: VtcCharge::Predicted, lift: true });
    let traces = 1000;
    let (mut mismatches, mut differs_from_fcfs) = (Vec::new(), 0);
    for seed in 0..traces {
        let (trace, max_batch) = micro_trace(seed);
        let perf = PerfParams { max_batch, ..PerfParams::default() };
        let options = EngineOptions { drain: true, ..EngineOptions::default() };
        let cfg = |policy: &PolicySpec| EngineConfig::new(perf.clone(), policy.clone(), options.clone());
        let label = format!("micro-trace {seed}");
        let (eq, _) = audit.simulate(&format!("{label} equinox"), &trace, &cfg(&equinox), &Predictor::Oracle);
        let (vt, _) = audit.simulate(&format!("{label} vtc"), &trace, &cfg(&vtc), &Predictor::Oracle);
        let (fc, _) = audit.simulate(&format!("{label} fcfs"), &trace, &cfg(&PolicySpec::Fcfs), &Predictor::Oracle);
        if eq.admissions != vt.admissions {
            mismatches.push(seed);
        }
        if vt.admissions != fc.admissions {
            differs_from_fcfs += 1;
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{}/{traces} traces with identical admission order ({differs_from_fcfs} of them differ from FCFS order){}",
            traces as usize - mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!("; first mismatch seed {}", mismatches[0]) }
        ),
    )
}

fn profile_shape() -> Outcome {
    let bounds: Vec<u32> = (5..=12).map(|k| 1u32 << k).collect();
    let profile = build_profile(&PerfParams::default(), &bounds, EngineOptions::default().reference_input_tokens).unwrap();
    let e = &profile.entries;
    let latency_up = e.windows(2).all(|w| w[1].latency_ms > w[0].latency_ms);
    let argmax = (0..e.len()).max_by(|&i, &j| e[i].tps.total_cmp(&e[j].tps)).unwrap();
    let interior = argmax > 0 && argmax + 1 < e.len();
    let util_up = e.windows(2).all(|w| w[1].gpu_util >= w[0].gpu_util);
    let small_util = e[0].gpu_util < 0.9;
    outcome(
        latency_up && interior && util_up && small_util,
        format!(
            "latency increasing={latency_up}, tps peak at bucket {}/{} (<= {} tokens), util non-decreasing={util_up}, first util={:.3}",
            argmax + 1,
            e.len(),
            e[argmax].bucket_upper,
            e[0].gpu_util
        ),
    )
}

fn table_ordering(audit: &mut Audit) -> Outcome {
    let seeds: Vec<u64> = (1..=20).collect();
    let vtc_pred = PolicySpec::Vtc(VtcParams { charge: VtcCharge::Predicted, ..VtcParams::default() });
    let cfg = |p: PolicySpec| EngineConfig::with_policy(p);
    let names = ["Equinox+Oracle", "Equinox+MoPE(noisy L1=33)", "VTC+Oracle", "VTC", "FCFS"];
    let mut diffs = vec![Vec::new(); names.len()];
    for &seed in &seeds {
        let trace = generate_scenario(ScenarioName::Poisson, seed, 60.0).unwrap();
        let cells: [(PolicySpec, Predictor); 5] = [
            (PolicySpec::Equinox(EquinoxParams::default()), Predictor::Oracle),
            (PolicySpec::Equinox(EquinoxParams::default()), Predictor::noisy(33.0, seed)),
            (vtc_pred.clone(), Predictor::Oracle),
            (PolicySpec::Vtc(VtcParams::default()), Predictor::Oracle),
            (PolicySpec::Fcfs, Predictor::Oracle),
        ];
        for (k, (policy, pred)) in cells.into_iter().enumerate() {
            let (_, report) = audit.simulate(&format!("poisson seed {seed} {}", names[k]), &trace, &cfg(policy), &pred);
            diffs[k].push(report.service_difference.expect("two clients").avg);
        }
    }
    let n = seeds.len() as f64;
    let means: Vec<f64> = diffs.iter().map(|d| d.iter().sum::<f64>() / n).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..names.len() - 1 {
        let strict = k + 2 < names.len();
        let held = (0..seeds.len())
            .filter(|&s| if strict { diffs[k][s] < diffs[k + 1][s] } else { diffs[k][s] <= diffs[k + 1][s] })
            .count();
        let mean_ok = if strict { means[k] < means[k + 1] } else { means[k] <= means[k + 1] };
        let frac = held as f64 / n;
        pass &= mean_ok && frac >= 0.8;
        parts.push(format!("{} {} {}: {held}/{}", names[k], if strict { "<" } else { "<=" }, names[k + 1], seeds.len()));
    }
    let means_s: Vec<String> = means.iter().map(|m| format!("{m:.0}")).collect();
    outcome(pass, format!("{}; means [{}]", parts.join(", "), means_s.join(", ")))
}

fn overload_bounded(audit: &mut Audit) -> Outcome {
    // The run must be long enough for the long-request client to complete
    // work under every policy; 600 s is ten minutes of sustained overload.
    let horizon = 600.0;
    let trace = generate_scenario(ScenarioName::Overload, 1, horizon).unwrap();
    let base = EngineConfig::default();
    let ow = base.ledger_params().output_weight;
    let weights = weights_of(&trace);
    let largest = trace
        .requests
        .iter()
        .map(|r| weights[&r.client_id] * (r.input_tokens as f64 + ow * r.true_output_tokens as f64))
        .fold(0.0, f64::max);
    let bound = 2.0 * largest * base.perf.max_batch as f64;
    let mut finals = Vec::new();
    for (name, policy) in [
        ("Equinox", PolicySpec::Equinox(EquinoxParams::default())),
        ("VTC", PolicySpec::Vtc(VtcParams::default())),
        ("FCFS", PolicySpec::Fcfs),
    ] {
        let (_, report) = audit.simulate(&format!("overload {name}"), &trace, &EngineConfig::with_policy(policy), &Predictor::Oracle);
        let sd = report.service_difference.expect("two clients");
        finals.push(sd.series.last().map(|s| s.1).unwrap_or(0.0));
    }
    let (eq, vtc, fcfs) = (finals[0], finals[1], finals[2]);
    let checks = [
        ("Equinox bounded", eq < bound),
        ("VTC bounded", vtc < bound),
        ("FCFS > 2x Equinox", fcfs > 2.0 * eq),
        ("FCFS > 2x VTC", fcfs > 2.0 * vtc),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "final gaps at {horizon:.0}s: Equinox {eq:.0}, VTC {vtc:.0}, FCFS {fcfs:.0}; bound {bound:.0}{}",
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn mean_l1(pred: &Predictor, corpus: &[Request]) -> f64 {
    corpus.iter().map(|r| (pred.predict(r).unwrap() as f64 - r.true_output_tokens as f64).abs()).sum::<f64>()
        / corpus.len() as f64
}

fn predictor_ordering() -> Outcome {
    let spec = CorpusSpec { size: 10_000, ..CorpusSpec::default() };
    let corpus = generate_corpus(&spec, 11).unwrap().requests;
    // Per-bucket medians of the true lengths must differ.
    let mut lens: Vec<u32> = corpus.iter().map(|r| r.true_output_tokens).collect();
    lens.sort_unstable();
    let cut = |p: f64| lens[((p * lens.len() as f64) as usize).min(lens.len() - 1)];
    let (b1, b2) = (cut(1.0 / 3.0), cut(2.0 / 3.0));
    let median = |lo: u32, hi: u32| {
        let v: Vec<u32> = lens.iter().copied().filter(|&l| l > lo && l <= hi).collect();
        v[v.len() / 2]
    };
    let medians = [median(0, b1), median(b1, b2), median(b2, u32::MAX)];
    let distinct = medians[0] < medians[1] && medians[1] < medians[2];

    let mope = Predictor::mope(train_mope(&corpus, &MopeTraining::with_experts(3)).unwrap());
    let single = Predictor::train_single(&corpus, 8).unwrap();
    let (l1_mope, l1_single) = (mean_l1(&mope, &corpus), mean_l1(&single, &corpus));
    let n33 = mean_l1(&Predictor::noisy(33.0, 5), &corpus);
    let n80 = mean_l1(&Predictor::noisy(80.0, 5), &corpus);
    let ok33 = (33.0 * 0.9..=33.0 * 1.1).contains(&n33);
    let ok80 = (80.0 * 0.9..=80.0 * 1.1).contains(&n80);
    outcome(
        distinct && l1_mope < l1_single && ok33 && ok80,
        format!(
            "bucket medians {medians:?}; L1 MoPE(3) {l1_mope:.1} vs single {l1_single:.1}; noisy targets 33 -> {n33:.1}, 80 -> {n80:.1}"
        ),
    )
}

fn alpha_sweep(audit: &mut Audit) -> Outcome {
    let mut cfg = RunConfig::new(ScenarioSpec::preset(ScenarioName::Poisson, 60.0));
    cfg.seeds = (1..=5).collect();
    cfg.predictor = PredictorSpec::Oracle;
    let alphas = [0.5, 0.6, 0.7, 0.8, 0.9];
    let sweep = sweep_alpha(&cfg, &alphas, 4).unwrap();
    let replay = sweep_alpha(&cfg, &alphas, 1).unwrap();
    for (k, (cell, again)) in sweep.runs.iter().zip(&replay.runs).enumerate() {
        for (r, a) in cell.iter().zip(again) {
            let trace = cfg.scenario.materialize(r.seed).unwrap();
            let policy = PolicySpec::Equinox(EquinoxParams { alpha: alphas[k], beta: 1.0 - alphas[k], ..EquinoxParams::default() });
            audit.check(&format!("sweep alpha={} seed {}", alphas[k], r.seed), &trace, &cfg.engine_config(&policy), &r.output, &a.output.log, &r.report);
        }
    }
    let j: Vec<f64> = sweep.rows.iter().map(|r| r.jain_ttft_p90_norm).collect();
    let t: Vec<f64> = sweep.rows.iter().map(|r| r.throughput_norm).collect();
    let j_inv = j.windows(2).filter(|w| w[1] < w[0]).count();
    let t_inv = t.windows(2).filter(|w| w[1] > w[0]).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    outcome(
        j_inv <= 1 && t_inv <= 1,
        format!("jain_ttft_p90_norm [{}] ({j_inv} inversions); throughput_norm [{}] ({t_inv} inversions)", fmt(&j), fmt(&t)),
    )
}

fn determinism_and_conservation(audit: &mut Audit) -> Outcome {
    // Every preset under every policy, on top of the runs above.
    for preset in ScenarioName::ALL {
        let trace = generate_scenario(preset, 3, 30.0).unwrap();
        for policy in [
            PolicySpec::Fcfs,
            PolicySpec::Vtc(VtcParams::default()),
            PolicySpec::Equinox(EquinoxParams::default()),
            PolicySpec::Equinox(EquinoxParams { rfc_mode: RfcMode::PerRequest, ..EquinoxParams::default() }),
        ] {
            let cfg = EngineConfig::with_policy(policy.clone());
            audit.simulate(&format!("{preset} {}", policy.name()), &trace, &cfg, &Predictor::noisy(33.0, 3));
        }
    }
    let pass = audit.nondeterministic.is_empty() && audit.conservation.is_empty();
    let mut detail = format!("{} runs replayed byte-identically, tokens conserved, memory within capacity", audit.runs);
    if !pass {
        detail = format!(
            "{} runs; nondeterministic: {:?}; conservation: {:?}",
            audit.runs,
            audit.nondeterministic.iter().take(3).collect::<Vec<_>>(),
            audit.conservation.iter().take(3).collect::<Vec<_>>()
        );
    }
    outcome(pass, detail)
}

fn completion(time: f64, id: u64, client: &str, input: u32, output: u32) -> LogEvent {
    LogEvent {
        time,
        request_id: id,
        client_id: client.into(),
        event: EventKind::Completed,
        input_tokens: Some(input),
        output_tokens: Some(output),
        actuals: None,
        reason: None,
    }
}

fn jain_bounds(audit: &mut Audit) -> Outcome {
    // Two clients with identical arrivals and lengths, light enough to be
    // admitted together.
    let mut requests = Vec::new();
    for k in 0..10u64 {
        for (j, c) in ["a", "b"].iter().enumerate() {
            requests.push(Request {
                id: 2 * k + j as u64,
                client_id: c.to_string(),
                arrival_time: 0.5 * k as f64,
                input_tokens: 50,
                true_output_tokens: 20,
                category_tag: None,
            });
        }
    }
    let symmetric = Trace { requests, clients: Vec::new(), duration: 10.0, warnings: Vec::new() };
    let mut sym_ok = true;
    let mut sym_vals = Vec::new();
    for policy in [PolicySpec::Fcfs, PolicySpec::Vtc(VtcParams::default()), PolicySpec::Equinox(EquinoxParams::default())] {
        let cfg = EngineConfig::with_policy(policy.clone());
        let (_, r) = audit.simulate(&format!("symmetric {}", policy.name()), &symmetric, &cfg, &Predictor::Oracle);
        sym_ok &= r.jain_hf == 1.0 && r.jain_ttft_p90 == 1.0 && r.jain_service == 1.0;
        sym_vals.push(format!("{}=({}, {}, {})", policy.name(), r.jain_hf, r.jain_ttft_p90, r.jain_service));
    }

    // One client takes all service.
    let mut mono_ok = true;
    for n in 2..=5usize {
        let weights: BTreeMap<String, f64> = (0..n).map(|i| (format!("c{i}"), 1.0)).collect();
        let log = EventLog { events: (0..5).map(|k| completion(k as f64, k, "c0", 10, 10)).collect() };
        let totals: Vec<f64> = service_totals(&log, &weights, 4.0).into_values().collect();
        let j = jain_index(&totals).unwrap();
        mono_ok &= (j - 1.0 / n as f64).abs() <= JAIN_EPS;
    }

    let pass = sym_ok && mono_ok && audit.jain.is_empty();
    let mut detail = format!(
        "{} Jain values from {} runs in [1/n, 1] and matching recomputation; symmetric trace {}; monopoly logs n=2..5 give 1/n: {mono_ok}",
        audit.jain_values,
        audit.runs,
        sym_vals.join(" ")
    );
    if !audit.jain.is_empty() {
        detail.push_str(&format!("; violations: {:?}", audit.jain.iter().take(3).collect::<Vec<_>>()));
    }
    outcome(pass, detail)
}

fn main() {
    let mut audit = Audit::default();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("criterion {id} ({name}): {} [{secs:.1}s] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };
    timed(1, "formula fidelity", &mut formula_fidelity);
    timed(2, "VTC reduction", &mut || vtc_reduction(&mut audit));
    timed(3, "profile shape", &mut profile_shape);
    timed(4, "ablation ordering", &mut || table_ordering(&mut audit));
    timed(5, "overload boundedness", &mut || overload_bounded(&mut audit));
    timed(6, "predictor ordering", &mut predictor_ordering);
    timed(7, "alpha sweep trend", &mut || alpha_sweep(&mut audit));
    timed(8, "determinism and conservation", &mut || determinism_and_conservation(&mut audit));
    timed(9, "Jain bounds", &mut || jain_bounds(&mut audit));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

//! Discrete-event serving loop.
//!
//! Arrivals are queued per client, the policy picks heads to admit while
//! memory allows, and each iteration advances simulated time by the cost
//! model. Everything observable is written to an [`EventLog`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpu_model::{
    build_profile, can_fit, default_bucket_bounds, iteration_cost, BatchState, GpuProfile, IterationCost,
    PerfParams,
};
use crate::predictor::{update_map_in_place, Observation, PredictionRecord, Predictor};
use crate::scheduler::{
    Actuals, Backlog, ClientState, EquinoxParams, PolicySpec, Queued, ScheduleContext, Scheduler,
};
use crate::workload::{Request, Trace};

/// Engine knobs other than the cost model and the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineOptions {
    /// UFC/RFC parameters used to report fairness for non-Equinox policies.
    pub ledger: EquinoxParams,
    /// Width of the reporting window, seconds.
    pub report_window: f64,
    /// Stop time; `None` means the trace duration.
    pub max_sim_time: Option<f64>,
    /// Keep iterating past the stop time until the system is empty.
    pub drain: bool,
    /// Let admission skip a head that does not fit and try other clients.
    pub backfill: bool,
    /// Refresh the profile from measured actuals on completion.
    pub map_refresh: bool,
    pub ema_alpha: f64,
    pub profile_bounds: Vec<u32>,
    /// Input length used when profiling each bucket.
    pub reference_input_tokens: u32,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            ledger: EquinoxParams::default(),
            report_window: 1.0,
            max_sim_time: None,
            drain: false,
            backfill: false,
            map_refresh: true,
            ema_alpha: 0.2,
            profile_bounds: default_bucket_bounds(),
            reference_input_tokens: 1,
        }
    }
}

impl EngineOptions {
    pub fn validate(&self) -> Result<()> {
        self.ledger.validate()?;
        if !(self.report_window.is_finite() && self.report_window > 0.0) {
            return Err(Error::config("report_window", "must be > 0"));
        }
        if let Some(t) = self.max_sim_time {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::config("max_sim_time", "must be > 0"));
            }
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::config("ema_alpha", "must lie in (0, 1]"));
        }
        if self.reference_input_tokens == 0 {
            return Err(Error::config("reference_input_tokens", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub perf: PerfParams,
    pub policy: PolicySpec,
    pub options: EngineOptions,
}

impl EngineConfig {
    pub fn new(perf: PerfParams, policy: PolicySpec, options: EngineOptions) -> Self {
        EngineConfig { perf, policy, options }
    }

    /// Defaults with the given policy.
    pub fn with_policy(policy: PolicySpec) -> Self {
        EngineConfig { policy, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.perf.validate()?;
        self.policy.validate()?;
        self.options.validate()
    }

    /// Parameters of the UFC/RFC ledger actually used by the run.
    pub fn ledger_params(&self) -> &EquinoxParams {
        match &self.policy {
            PolicySpec::Equinox(p) => p,
            _ => &self.options.ledger,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrived,
    Admitted,
    FirstToken,
    Completed,
    Rejected,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub time: f64,
    pub request_id: u64,
    pub client_id: String,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u32>,
    /// Predicted length on admission, actual length on completion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuals: Option<Actuals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl LogEvent {
    fn new(time: f64, req: &Request, event: EventKind) -> Self {
        LogEvent {
            time,
            request_id: req.id,
            client_id: req.client_id.clone(),
            event,
            input_tokens: None,
            output_tokens: None,
            actuals: None,
            reason: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<LogEvent>,
}

impl EventLog {
    /// Newline-delimited JSON, one event per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<event log>", e))?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(buf)
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &LogEvent> {
        self.events.iter().filter(move |e| e.event == kind)
    }
}

/// Per-client counter snapshot at a window boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterSample {
    pub time_s: f64,
    pub client_id: String,
    pub ufc: f64,
    pub rfc: f64,
    pub hf: f64,
    pub service_cum: f64,
}

/// Engine utilisation over one reporting window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilSample {
    pub time_s: f64,
    pub gpu_util: f64,
    pub busy_ms: f64,
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub iterations: u64,
    pub busy_ms: f64,
    pub overhead_ms: f64,
    /// Time the run was measured over, seconds.
    pub end_time: f64,
    pub rejected: u64,
    pub max_resident_tokens: u64,
    pub capacity_tokens: u64,
    pub stalled_member_iterations: u64,
    pub counter_clamps: u64,
    pub predictor_fallbacks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub log: EventLog,
    pub counters: Vec<CounterSample>,
    pub util: Vec<UtilSample>,
    /// Client ledgers at the end of the run.
    pub clients: Vec<ClientState>,
    /// Request ids in admission order.
    pub admissions: Vec<u64>,
    pub stats: RunStats,
}

impl SimOutput {
    pub fn write_counters_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.counters)
    }

    pub fn write_util_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.util)
    }
}

fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)
            .map_err(|e| Error::io("<csv>", std::io::Error::other(e)))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Arrival(usize),
    IterationComplete,
    WindowTick,
}

impl Kind {
    fn rank(self) -> u8 {
        match self {
            Kind::Arrival(_) => 0,
            Kind::IterationComplete => 1,
            Kind::WindowTick => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: Kind,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.rank().cmp(&self.kind.rank()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Running {
    req: Request,
    admitted_at: f64,
    wait_s: f64,
    busy_ms: f64,
    overhead_ms: f64,
}

struct Sim<'a> {
    cfg: &'a EngineConfig,
    trace: &'a Trace,
    predictor: &'a Predictor,
    profile: GpuProfile,
    sched: Scheduler,
    backlog: Backlog,
    batch: BatchState,
    running: HashMap<u64, Running>,
    /// Members that produce a token in the in-flight iteration.
    growers: Vec<u64>,
    /// Tokens processed per client in the in-flight iteration, with its cost.
    iter_tokens: BTreeMap<String, u64>,
    iter_cost: IterationCost,
    in_flight: bool,
    boundary_pending: bool,
    heap: BinaryHeap<Event>,
    seq: u64,
    log: EventLog,
    counters: Vec<CounterSample>,
    util: Vec<UtilSample>,
    windows: BTreeMap<u64, (f64, f64)>,
    admissions: Vec<u64>,
    stats: RunStats,
    capacity: u64,
}

/// Run `trace` to completion (or the configured stop time).
pub fn run(trace: &Trace, cfg: &EngineConfig, predictor: &Predictor) -> Result<SimOutput> {
    cfg.validate()?;
    let profile = build_profile(&cfg.perf, &cfg.options.profile_bounds, cfg.options.reference_input_tokens)?;
    run_with_profile(trace, cfg, predictor, profile)
}

/// As [`run`], starting from an explicit profile.
pub fn run_with_profile(
    trace: &Trace,
    cfg: &EngineConfig,
    predictor: &Predictor,
    profile: GpuProfile,
) -> Result<SimOutput> {
    cfg.validate()?;
    profile.validate()?;
    let mut weights: BTreeMap<&str, f64> =
        trace.clients.iter().map(|c| (c.client_id.as_str(), c.weight)).collect();
    for r in &trace.requests {
        weights.entry(r.client_id.as_str()).or_insert(1.0);
    }
    let sched = Scheduler::new(cfg.policy.clone(), cfg.options.ledger.clone(), weights);
    let mut sim = Sim {
        cfg,
        trace,
        predictor,
        profile,
        sched,
        backlog: Backlog::new(),
        batch: BatchState::new(),
        running: HashMap::new(),
        growers: Vec::new(),
        iter_tokens: BTreeMap::new(),
        iter_cost: IterationCost::default(),
        in_flight: false,
        boundary_pending: false,
        heap: BinaryHeap::new(),
        seq: 0,
        log: EventLog::default(),
        counters: Vec::new(),
        util: Vec::new(),
        windows: BTreeMap::new(),
        admissions: Vec::new(),
        stats: RunStats {
            capacity_tokens: cfg.perf.capacity_tokens(),
            ..RunStats::default()
        },
        capacity: cfg.perf.capacity_tokens(),
    };
    sim.execute()?;
    Ok(SimOutput {
        log: sim.log,
        counters: sim.counters,
        util: sim.util,
        clients: sim.sched.clients().cloned().collect(),
        admissions: sim.admissions,
        stats: sim.stats,
    })
}

impl Sim<'_> {
    fn horizon(&self) -> f64 {
        self.cfg.options.max_sim_time.unwrap_or(self.trace.duration)
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event { time, kind, seq: self.seq });
    }

    fn has_work(&self) -> bool {
        self.in_flight || self.boundary_pending || !self.backlog.is_empty()
    }

    fn execute(&mut self) -> Result<()> {
        let horizon = self.horizon();
        for (i, r) in self.trace.requests.iter().enumerate() {
            if r.arrival_time <= horizon {
                self.seq += 1;
                self.heap.push(Event { time: r.arrival_time, kind: Kind::Arrival(i), seq: self.seq });
            }
        }
        let first_tick = self.cfg.options.report_window;
        self.push(first_tick, Kind::WindowTick);
        let mut end = horizon;
        while let Some(ev) = self.heap.pop() {
            if ev.time > horizon && !(self.cfg.options.drain && self.has_work()) {
                break;
            }
            end = end.max(ev.time.min(if self.cfg.options.drain { f64::INFINITY } else { horizon }));
            match ev.kind {
                Kind::Arrival(i) => self.on_arrival(ev.time, i)?,
                Kind::IterationComplete => self.on_boundary(ev.time)?,
                Kind::WindowTick => {
                    self.sample(ev.time);
                    let next = ev.time + self.cfg.options.report_window;
                    if next <= horizon + 1e-9 || (self.cfg.options.drain && self.has_work()) {
                        self.push(next, Kind::WindowTick);
                    }
                }
            }
        }
        self.stats.end_time = end;
        self.stats.counter_clamps = self.sched.clamp_count();
        self.stats.predictor_fallbacks = self.predictor.fallback_count();
        Ok(())
    }

    fn on_arrival(&mut self, now: f64, idx: usize) -> Result<()> {
        let req = self.trace.requests[idx].clone();
        let mut ev = LogEvent::new(now, &req, EventKind::Arrived);
        ev.input_tokens = Some(req.input_tokens);
        self.log.events.push(ev);

        let prediction = self.predictor.predict_record(&req, &self.profile)?;
        let alone = can_fit(&BatchState::new(), &req, prediction.predicted_output_tokens, &self.cfg.perf);
        let true_need = req.input_tokens as u64 + req.true_output_tokens as u64;
        if !alone || true_need > self.capacity {
            log::warn!(
                "request {} from {} can never fit in memory (input {}, output {}, predicted {}); rejected",
                req.id,
                req.client_id,
                req.input_tokens,
                req.true_output_tokens,
                prediction.predicted_output_tokens
            );
            let mut ev = LogEvent::new(now, &req, EventKind::Rejected);
            ev.reason = Some("exceeds memory capacity".into());
            self.log.events.push(ev);
            self.stats.rejected += 1;
            return Ok(());
        }
        let client = req.client_id.clone();
        if self.backlog.push(Queued { req, prediction }) {
            self.sched.on_backlogged(&client);
        }
        if !self.in_flight && !self.boundary_pending {
            self.boundary_pending = true;
            self.push(now, Kind::IterationComplete);
        }
        Ok(())
    }

    fn on_boundary(&mut self, now: f64) -> Result<()> {
        self.boundary_pending = false;
        if self.in_flight {
            self.finish_iteration(now)?;
        }
        let new_prefill = self.admit(now);
        if self.batch.is_empty() {
            return Ok(());
        }
        self.start_iteration(now, new_prefill)
    }

    fn finish_iteration(&mut self, now: f64) -> Result<()> {
        self.in_flight = false;
        let cost = self.iter_cost;
        let util = if cost.total_ms() > 0.0 { cost.busy_ms / cost.total_ms() } else { 0.0 };
        for (client, tokens) in std::mem::take(&mut self.iter_tokens) {
            self.sched.on_batch(&client, tokens, cost.total_ms() / 1000.0, util);
        }
        let growers = std::mem::take(&mut self.growers);
        for id in growers {
            let (generated, target) = {
                let m = self.batch.members().iter().find(|m| m.request_id == id);
                let r = &self.running[&id];
                (m.map_or(0, |m| m.generated), r.req.true_output_tokens)
            };
            let req = self.running[&id].req.clone();
            if generated == 1 {
                self.log.events.push(LogEvent::new(now, &req, EventKind::FirstToken));
            }
            if generated >= target {
                self.complete(now, id)?;
            }
        }
        Ok(())
    }

    fn complete(&mut self, now: f64, id: u64) -> Result<()> {
        self.batch.remove(id);
        let r = self
            .running
            .remove(&id)
            .ok_or_else(|| Error::Consistency(format!("completion of non-resident request {id}")))?;
        let service_s = now - r.admitted_at;
        let out = r.req.true_output_tokens;
        let busy = r.busy_ms + r.overhead_ms;
        let actuals = Actuals {
            out_tokens: out,
            latency_s: now - r.req.arrival_time,
            service_s,
            gpu_util: if busy > 0.0 { r.busy_ms / busy } else { 0.0 },
            tps: (r.req.input_tokens + out) as f64 / service_s,
        };
        debug_assert!((actuals.latency_s - (r.wait_s + service_s)).abs() < 1e-6);
        let mut ev = LogEvent::new(now, &r.req, EventKind::Completed);
        ev.input_tokens = Some(r.req.input_tokens);
        ev.output_tokens = Some(out);
        ev.actuals = Some(actuals);
        self.log.events.push(ev);
        self.sched.on_complete(&r.req, &actuals)?;
        if self.cfg.options.map_refresh {
            let obs = Observation {
                output_tokens: out,
                latency_ms: service_s * 1000.0,
                gpu_util: actuals.gpu_util,
                tps: actuals.tps,
            };
            update_map_in_place(&mut self.profile, &obs, self.cfg.options.ema_alpha);
        }
        Ok(())
    }

    /// Admit heads while they fit; returns the prefill tokens admitted.
    fn admit(&mut self, now: f64) -> u64 {
        let mut prefill = 0;
        let mut skipped: Vec<String> = Vec::new();
        while let Some(client) = self.sched.select_excluding(&self.backlog, &skipped) {
            let head = self.backlog.head(&client).expect("selected client has a head");
            let fits = can_fit(&self.batch, &head.req, head.prediction.predicted_output_tokens, &self.cfg.perf);
            if !fits {
                if self.cfg.options.backfill {
                    skipped.push(client);
                    continue;
                }
                break;
            }
            let Queued { req, prediction } = self.backlog.pop(&client).expect("head exists");
            if !self.backlog.is_backlogged(&client) {
                self.sched.on_idle(&client);
            }
            self.admit_one(now, req, prediction);
            prefill += self.batch.members().last().map_or(0, |m| m.input_tokens as u64);
        }
        prefill
    }

    fn admit_one(&mut self, now: f64, req: Request, prediction: PredictionRecord) {
        let ctx = ScheduleContext::new(now, &req, prediction);
        self.sched.on_admit(&req, &ctx);
        self.batch.admit(&req, prediction.predicted_output_tokens);
        let mut ev = LogEvent::new(now, &req, EventKind::Admitted);
        ev.output_tokens = Some(prediction.predicted_output_tokens);
        self.log.events.push(ev);
        self.admissions.push(req.id);
        self.running.insert(
            req.id,
            Running {
                wait_s: ctx.wait_time,
                admitted_at: now,
                req,
                busy_ms: 0.0,
                overhead_ms: 0.0,
            },
        );
    }

    /// Decide which members generate a token this iteration. Members still
    /// inside their reservation always do; members past it grow only while
    /// committed memory stays within capacity, oldest first.
    fn pick_growers(&mut self, now: f64) -> Result<Vec<u64>> {
        loop {
            let mut room = self.capacity.saturating_sub(self.batch.committed_kv_tokens());
            let mut growers = Vec::with_capacity(self.batch.len());
            let mut stalled = 0;
            for m in self.batch.members() {
                if m.generated < m.reserved_output {
                    growers.push(m.request_id);
                } else if room > 0 {
                    room -= 1;
                    growers.push(m.request_id);
                } else {
                    stalled += 1;
                }
            }
            self.stats.stalled_member_iterations += stalled;
            if !growers.is_empty() {
                return Ok(growers);
            }
            // Every member overran its reservation and memory is full: drop
            // the most recent admission so the rest can make progress.
            let victim = self
                .batch
                .members()
                .last()
                .map(|m| m.request_id)
                .ok_or_else(|| Error::Consistency("empty batch in iteration".into()))?;
            self.batch.remove(victim);
            let r = self
                .running
                .remove(&victim)
                .ok_or_else(|| Error::Consistency(format!("unknown batch member {victim}")))?;
            log::warn!("request {victim} dropped: memory exhausted by overrunning requests");
            let mut ev = LogEvent::new(now, &r.req, EventKind::Rejected);
            ev.reason = Some("memory exhausted during decode".into());
            self.log.events.push(ev);
            self.stats.rejected += 1;
            self.sched.on_abort(victim)?;
        }
    }

    fn start_iteration(&mut self, now: f64, new_prefill: u64) -> Result<()> {
        let growers = self.pick_growers(now)?;
        let cost = iteration_cost(&self.batch, new_prefill, &self.cfg.perf);
        self.batch.composition_changed = false;
        let mut tokens: BTreeMap<String, u64> = BTreeMap::new();
        for &id in &growers {
            let m = self
                .batch
                .member_mut(id)
                .ok_or_else(|| Error::Consistency(format!("grower {id} not in batch")))?;
            m.generated += 1;
            let prefill = if m.generated == 1 { m.input_tokens as u64 } else { 0 };
            let client = self.running[&id].req.client_id.clone();
            *tokens.entry(client.clone()).or_default() += 1 + prefill;
            self.sched.on_tokens(&client, 1);
        }
        self.iter_tokens = tokens;
        self.iter_cost = cost;
        for r in self.running.values_mut() {
            r.busy_ms += cost.busy_ms;
            r.overhead_ms += cost.overhead_ms;
        }
        let resident = self.batch.resident_kv_tokens();
        if resident > self.capacity {
            return Err(Error::Consistency(format!(
                "resident KV tokens {resident} exceed capacity {}",
                self.capacity
            )));
        }
        self.stats.max_resident_tokens = self.stats.max_resident_tokens.max(resident);
        self.stats.iterations += 1;
        self.stats.busy_ms += cost.busy_ms;
        self.stats.overhead_ms += cost.overhead_ms;
        let end = now + cost.total_ms() / 1000.0;
        self.credit_windows(now, end, cost.busy_ms, cost.overhead_ms);
        self.growers = growers;
        self.in_flight = true;
        self.push(end, Kind::IterationComplete);
        Ok(())
    }

    /// Spread an iteration's busy/overhead time over the windows it spans.
    fn credit_windows(&mut self, start: f64, end: f64, busy_ms: f64, overhead_ms: f64) {
        let w = self.cfg.options.report_window;
        let span = end - start;
        if span <= 0.0 {
            return;
        }
        let mut t = start;
        while t < end {
            let k = (t / w).floor() as u64;
            let next = ((k + 1) as f64 * w).min(end);
            let frac = (next - t) / span;
            let slot = self.windows.entry(k).or_default();
            slot.0 += busy_ms * frac;
            slot.1 += overhead_ms * frac;
            if next <= t {
                break;
            }
            t = next;
        }
    }

    fn sample(&mut self, now: f64) {
        let hf = self.sched.hf_all();
        for c in self.sched.clients() {
            self.counters.push(CounterSample {
                time_s: now,
                client_id: c.client_id.clone(),
                ufc: c.ufc,
                rfc: c.rfc,
                hf: hf.get(&c.client_id).copied().unwrap_or(0.0),
                service_cum: c.accumulated_service,
            });
        }
        let w = self.cfg.options.report_window;
        let k = ((now / w).round() as u64).saturating_sub(1);
        let (busy_ms, overhead_ms) = self.windows.remove(&k).unwrap_or_default();
        self.util.push(UtilSample {
            time_s: now,
            gpu_util: (busy_ms / (w * 1000.0)).min(1.0),
            busy_ms,
            overhead_ms,
        });
    }
}

/// Measured outcome of `request_id` reconstructed from the log.
pub fn measure_actuals(request_id: u64, log: &EventLog) -> Option<Actuals> {
    let mut arrived = None;
    let mut admitted = None;
    let mut done = None;
    for e in log.events.iter().filter(|e| e.request_id == request_id) {
        match e.event {
            EventKind::Arrived => arrived = Some(e),
            EventKind::Admitted => admitted = Some(e),
            EventKind::Completed => done = Some(e),
            _ => {}
        }
    }
    let (arrived, admitted, done) = (arrived?, admitted?, done?);
    let out = done.output_tokens?;
    let input = done.input_tokens.or(arrived.input_tokens)?;
    let service_s = done.time - admitted.time;
    Some(Actuals {
        out_tokens: out,
        latency_s: done.time - arrived.time,
        service_s,
        gpu_util: done.actuals.map_or(0.0, |a| a.gpu_util),
        tps: (input + out) as f64 / service_s,
    })
}

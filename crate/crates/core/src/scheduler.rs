//! Scheduling policies: FCFS, VTC and Equinox (holistic fairness).
//!
//! Every policy keeps the per-client User Fairness Counter (UFC) and
//! Resource Fairness Counter (RFC) up to date so that the holistic score can
//! be reported for any run; only Equinox uses them to pick the next client.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictionRecord;
use crate::workload::Request;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Divide each counter by its maximum over backlogged clients.
    #[default]
    MaxOverClients,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquinoxParams {
    pub alpha: f64,
    pub beta: f64,
    /// Latency compensation factor, per second.
    pub delta: f64,
    pub output_weight: f64,
    pub norm_mode: NormMode,
    /// Lift a newly backlogged client's counters to the backlogged minimum.
    pub lift: bool,
    pub rfc_mode: RfcMode,
}

/// When the resource counter is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RfcMode {
    /// Predicted `tps * util` at admission, replaced by actuals on completion.
    PerRequest,
    /// After every engine iteration, from the client's measured share of it.
    #[default]
    PerBatch,
}

impl Default for EquinoxParams {
    fn default() -> Self {
        EquinoxParams {
            alpha: 0.7,
            beta: 0.3,
            delta: 0.1,
            output_weight: 4.0,
            norm_mode: NormMode::MaxOverClients,
            lift: true,
            rfc_mode: RfcMode::PerBatch,
        }
    }
}

impl EquinoxParams {
    pub fn with_alpha(alpha: f64) -> Self {
        EquinoxParams {
            alpha,
            beta: 1.0 - alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) || (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(Error::config("beta", "must equal 1 - alpha"));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::config("delta", "must be >= 0"));
        }
        if !(self.output_weight.is_finite() && self.output_weight > 0.0) {
            return Err(Error::config("output_weight", "must be > 0"));
        }
        Ok(())
    }
}

/// How VTC charges output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VtcCharge {
    /// Input at admission, output one token at a time as it is generated.
    #[default]
    Incremental,
    /// Input plus predicted output at admission, corrected at completion.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VtcParams {
    pub input_weight: f64,
    pub output_weight: f64,
    pub charge: VtcCharge,
    pub lift: bool,
}

impl Default for VtcParams {
    fn default() -> Self {
        VtcParams {
            input_weight: 1.0,
            output_weight: 4.0,
            charge: VtcCharge::Incremental,
            lift: true,
        }
    }
}

impl VtcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.input_weight >= 0.0 && self.output_weight > 0.0) {
            return Err(Error::config("output_weight", "token weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Fcfs,
    Vtc(VtcParams),
    Equinox(EquinoxParams),
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Equinox(EquinoxParams::default())
    }
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Fcfs => "fcfs",
            PolicySpec::Vtc(_) => "vtc",
            PolicySpec::Equinox(_) => "equinox",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicySpec::Fcfs => Ok(()),
            PolicySpec::Vtc(p) => p.validate(),
            PolicySpec::Equinox(p) => p.validate(),
        }
    }
}

/// Per-tenant fairness ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_id: String,
    pub weight: f64,
    pub ufc: f64,
    pub rfc: f64,
    /// VTC virtual token counter.
    pub vtc: f64,
    /// Weighted tokens of completed requests.
    pub accumulated_service: f64,
    pub backlogged: bool,
}

impl ClientState {
    pub fn new(client_id: impl Into<String>, weight: f64) -> Self {
        ClientState {
            client_id: client_id.into(),
            weight,
            ufc: 0.0,
            rfc: 0.0,
            vtc: 0.0,
            accumulated_service: 0.0,
            backlogged: false,
        }
    }
}

/// Inputs to a counter update at admission time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleContext {
    pub now: f64,
    /// Seconds the request spent queued.
    pub wait_time: f64,
    pub prediction: PredictionRecord,
}

impl ScheduleContext {
    pub fn new(now: f64, req: &Request, prediction: PredictionRecord) -> Self {
        ScheduleContext {
            now,
            wait_time: (now - req.arrival_time).max(0.0),
            prediction,
        }
    }
}

/// `w * (in + ow*out) / (1 + delta*(wait + predict_time))` with times in seconds.
pub fn ufc_formula(
    input_tokens: u32,
    output_tokens: u32,
    wait_s: f64,
    service_s: f64,
    weight: f64,
    params: &EquinoxParams,
) -> f64 {
    weight * (input_tokens as f64 + params.output_weight * output_tokens as f64)
        / (1.0 + params.delta * (wait_s + service_s))
}

pub fn ufc_increment(req: &Request, ctx: &ScheduleContext, weight: f64, params: &EquinoxParams) -> f64 {
    ufc_formula(
        req.input_tokens,
        ctx.prediction.predicted_output_tokens,
        ctx.wait_time,
        ctx.prediction.predicted_latency_ms / 1000.0,
        weight,
        params,
    )
}

/// `w * tps * util`.
pub fn rfc_term(weight: f64, tps: f64, util: f64) -> f64 {
    weight * tps * util
}

pub fn rfc_increment(prediction: &PredictionRecord, weight: f64) -> f64 {
    rfc_term(weight, prediction.predicted_tps, prediction.predicted_gpu_util)
}

fn normalized(value: f64, max: f64) -> f64 {
    if max > 0.0 {
        value / max
    } else {
        0.0
    }
}

/// Holistic fairness score of `client` relative to `all_clients`.
pub fn holistic_score(client: &ClientState, all_clients: &[&ClientState], params: &EquinoxParams) -> f64 {
    match params.norm_mode {
        NormMode::None => params.alpha * client.ufc + params.beta * client.rfc,
        NormMode::MaxOverClients => {
            let max_ufc = all_clients.iter().map(|c| c.ufc).fold(0.0, f64::max);
            let max_rfc = all_clients.iter().map(|c| c.rfc).fold(0.0, f64::max);
            params.alpha * normalized(client.ufc, max_ufc) + params.beta * normalized(client.rfc, max_rfc)
        }
    }
}

/// A queued request with its prediction attached at arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct Queued {
    pub req: Request,
    pub prediction: PredictionRecord,
}

/// Per-client FIFO queues.
#[derive(Debug, Clone, Default)]
pub struct Backlog {
    queues: BTreeMap<String, VecDeque<Queued>>,
}

impl Backlog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append; returns true when the client was idle before.
    pub fn push(&mut self, q: Queued) -> bool {
        let queue = self.queues.entry(q.req.client_id.clone()).or_default();
        queue.push_back(q);
        queue.len() == 1
    }

    pub fn head(&self, client: &str) -> Option<&Queued> {
        self.queues.get(client).and_then(VecDeque::front)
    }

    pub fn pop(&mut self, client: &str) -> Option<Queued> {
        self.queues.get_mut(client).and_then(VecDeque::pop_front)
    }

    pub fn is_empty(&self) -> bool {
        self.queues.values().all(VecDeque::is_empty)
    }

    pub fn len(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn is_backlogged(&self, client: &str) -> bool {
        self.queues.get(client).is_some_and(|q| !q.is_empty())
    }

    /// Head requests of all backlogged clients, in client-id order.
    pub fn heads(&self) -> impl Iterator<Item = (&str, &Queued)> {
        self.queues
            .iter()
            .filter_map(|(c, q)| q.front().map(|h| (c.as_str(), h)))
    }
}

/// Measured outcome of a completed request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuals {
    pub out_tokens: u32,
    /// Arrival to completion, seconds.
    pub latency_s: f64,
    /// Admission to completion, seconds.
    pub service_s: f64,
    pub gpu_util: f64,
    pub tps: f64,
}

#[derive(Debug, Clone, Copy)]
struct Admission {
    wait_s: f64,
    predicted_out: u32,
    ufc: f64,
    rfc: f64,
}

/// Policy state machine driven by the engine's event loop.
#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: PolicySpec,
    /// Parameters used for the UFC/RFC ledger.
    ledger: EquinoxParams,
    clients: BTreeMap<String, ClientState>,
    admitted: HashMap<u64, Admission>,
    clamps: u64,
}

impl Scheduler {
    /// `ledger` drives the UFC/RFC bookkeeping for non-Equinox policies.
    pub fn new<'a>(
        policy: PolicySpec,
        ledger: EquinoxParams,
        clients: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Self {
        let ledger = match &policy {
            PolicySpec::Equinox(p) => p.clone(),
            _ => ledger,
        };
        Scheduler {
            policy,
            ledger,
            clients: clients
                .into_iter()
                .map(|(id, w)| (id.to_string(), ClientState::new(id, w)))
                .collect(),
            admitted: HashMap::new(),
            clamps: 0,
        }
    }

    pub fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    pub fn ledger_params(&self) -> &EquinoxParams {
        &self.ledger
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientState> {
        self.clients.values()
    }

    pub fn client(&self, id: &str) -> Option<&ClientState> {
        self.clients.get(id)
    }

    pub fn client_mut(&mut self, id: &str) -> Option<&mut ClientState> {
        self.clients.get_mut(id)
    }

    /// Number of counter corrections clamped at zero.
    pub fn clamp_count(&self) -> u64 {
        self.clamps
    }

    fn state_mut(&mut self, id: &str) -> &mut ClientState {
        self.clients
            .entry(id.to_string())
            .or_insert_with(|| ClientState::new(id, 1.0))
    }

    fn lift_enabled(&self) -> (bool, bool) {
        match &self.policy {
            PolicySpec::Vtc(v) => (self.ledger.lift, v.lift),
            _ => (self.ledger.lift, false),
        }
    }

    /// Mark a client as backlogged; on an idle -> backlogged transition its
    /// counters are raised to the minimum over the other backlogged clients.
    pub fn on_backlogged(&mut self, client: &str) {
        let (lift_ledger, lift_vtc) = self.lift_enabled();
        let others: Vec<(f64, f64, f64)> = self
            .clients
            .values()
            .filter(|c| c.backlogged && c.client_id != client)
            .map(|c| (c.ufc, c.rfc, c.vtc))
            .collect();
        let state = self.state_mut(client);
        if state.backlogged {
            return;
        }
        state.backlogged = true;
        if others.is_empty() {
            return;
        }
        let min = |f: fn(&(f64, f64, f64)) -> f64| others.iter().map(f).fold(f64::INFINITY, f64::min);
        if lift_ledger {
            state.ufc = state.ufc.max(min(|o| o.0));
            state.rfc = state.rfc.max(min(|o| o.1));
        }
        if lift_vtc {
            state.vtc = state.vtc.max(min(|o| o.2));
        }
    }

    pub fn on_idle(&mut self, client: &str) {
        self.state_mut(client).backlogged = false;
    }

    /// Holistic score of every client, normalised over `pool`.
    fn hf_over(&self, pool: &[&ClientState]) -> Vec<(String, f64)> {
        pool.iter()
            .map(|c| (c.client_id.clone(), holistic_score(c, pool, &self.ledger)))
            .collect()
    }

    /// Holistic scores of all clients, normalised over all clients.
    pub fn hf_all(&self) -> BTreeMap<String, f64> {
        let pool: Vec<&ClientState> = self.clients.values().collect();
        self.hf_over(&pool).into_iter().collect()
    }

    /// Holistic score of one client, normalised over the backlogged set
    /// (plus the client itself).
    pub fn hf_of(&self, client: &str) -> f64 {
        let pool: Vec<&ClientState> = self
            .clients
            .values()
            .filter(|c| c.backlogged || c.client_id == client)
            .collect();
        pool.iter()
            .find(|c| c.client_id == client)
            .map_or(0.0, |c| holistic_score(c, &pool, &self.ledger))
    }

    /// Choose the client whose head request should be admitted next.
    pub fn select_next(&self, backlog: &Backlog) -> Option<String> {
        self.select_excluding(backlog, &[])
    }

    /// `select_next` ignoring the clients in `skip`.
    pub fn select_excluding(&self, backlog: &Backlog, skip: &[String]) -> Option<String> {
        let heads: Vec<(&str, &Queued)> = backlog
            .heads()
            .filter(|(c, _)| !skip.iter().any(|s| s == c))
            .collect();
        if heads.is_empty() {
            return None;
        }
        let tie = |a: &(&str, &Queued), b: &(&str, &Queued)| {
            a.1.req
                .arrival_time
                .total_cmp(&b.1.req.arrival_time)
                .then_with(|| a.0.cmp(b.0))
        };
        let keys: Vec<f64> = match &self.policy {
            PolicySpec::Equinox(_) => {
                let pool: Vec<&ClientState> = heads
                    .iter()
                    .filter_map(|(c, _)| self.clients.get(*c))
                    .collect();
                heads
                    .iter()
                    .map(|(c, _)| {
                        self.clients
                            .get(*c)
                            .map_or(0.0, |s| holistic_score(s, &pool, &self.ledger))
                    })
                    .collect()
            }
            PolicySpec::Vtc(_) => heads
                .iter()
                .map(|(c, _)| self.clients.get(*c).map_or(0.0, |s| s.vtc))
                .collect(),
            PolicySpec::Fcfs => vec![0.0; heads.len()],
        };
        (0..heads.len())
            .min_by(|&i, &j| {
                keys[i]
                    .total_cmp(&keys[j])
                    .then_with(|| tie(&heads[i], &heads[j]))
                    .then_with(|| heads[i].1.req.id.cmp(&heads[j].1.req.id))
            })
            .map(|i| heads[i].0.to_string())
    }

    /// Charge the counters for a request that just joined the batch.
    pub fn on_admit(&mut self, req: &Request, ctx: &ScheduleContext) {
        let ledger = self.ledger.clone();
        let vtc = match &self.policy {
            PolicySpec::Vtc(v) => Some(v.clone()),
            _ => None,
        };
        let state = self.state_mut(&req.client_id);
        let w = state.weight;
        let ufc = ufc_increment(req, ctx, w, &ledger);
        let rfc = match ledger.rfc_mode {
            RfcMode::PerRequest => rfc_increment(&ctx.prediction, w),
            RfcMode::PerBatch => 0.0,
        };
        state.ufc += ufc;
        state.rfc += rfc;
        if let Some(v) = vtc {
            state.vtc += w * v.input_weight * req.input_tokens as f64;
            if v.charge == VtcCharge::Predicted {
                state.vtc += w * v.output_weight * ctx.prediction.predicted_output_tokens as f64;
            }
        }
        self.admitted.insert(
            req.id,
            Admission {
                wait_s: ctx.wait_time,
                predicted_out: ctx.prediction.predicted_output_tokens,
                ufc,
                rfc,
            },
        );
    }

    /// Charge the resource counter for one finished iteration in which
    /// `client` processed `tokens` tokens (prefill plus decode).
    pub fn on_batch(&mut self, client: &str, tokens: u64, iteration_s: f64, util: f64) {
        if self.ledger.rfc_mode != RfcMode::PerBatch || iteration_s <= 0.0 {
            return;
        }
        let state = self.state_mut(client);
        state.rfc += rfc_term(state.weight, tokens as f64 / iteration_s, util);
    }

    /// Account `n` freshly generated output tokens.
    pub fn on_tokens(&mut self, client: &str, n: u32) {
        if let PolicySpec::Vtc(v) = &self.policy {
            if v.charge == VtcCharge::Incremental {
                let ow = v.output_weight;
                let state = self.state_mut(client);
                state.vtc += state.weight * ow * n as f64;
            }
        }
    }

    /// Forget an admitted request that was dropped without completing.
    /// Charges already made stay on the books.
    pub fn on_abort(&mut self, request_id: u64) -> Result<()> {
        self.admitted
            .remove(&request_id)
            .map(|_| ())
            .ok_or_else(|| Error::Consistency(format!("abort of unknown request {request_id}")))
    }

    /// Replace the predicted contribution of `req` with the one implied by
    /// the measured actuals.
    pub fn on_complete(&mut self, req: &Request, actuals: &Actuals) -> Result<()> {
        let adm = self.admitted.remove(&req.id).ok_or_else(|| {
            Error::Consistency(format!("completion for unknown request {}", req.id))
        })?;
        let ledger = self.ledger.clone();
        let vtc = match &self.policy {
            PolicySpec::Vtc(v) => Some(v.clone()),
            _ => None,
        };
        let mut clamped = false;
        let state = self.state_mut(&req.client_id);
        let w = state.weight;
        let ufc_actual = ufc_formula(
            req.input_tokens,
            actuals.out_tokens,
            adm.wait_s,
            actuals.service_s,
            w,
            &ledger,
        );
        let rfc_actual = match ledger.rfc_mode {
            RfcMode::PerRequest => rfc_term(w, actuals.tps, actuals.gpu_util),
            RfcMode::PerBatch => 0.0,
        };
        for (counter, delta) in [
            (&mut state.ufc, ufc_actual - adm.ufc),
            (&mut state.rfc, rfc_actual - adm.rfc),
        ] {
            *counter += delta;
            if *counter < 0.0 {
                *counter = 0.0;
                clamped = true;
            }
        }
        if let Some(v) = vtc {
            if v.charge == VtcCharge::Predicted {
                state.vtc += w * v.output_weight * (actuals.out_tokens as f64 - adm.predicted_out as f64);
                if state.vtc < 0.0 {
                    state.vtc = 0.0;
                    clamped = true;
                }
            }
        }
        state.accumulated_service += w * (req.input_tokens as f64 + ledger.output_weight * actuals.out_tokens as f64);
        if clamped {
            log::debug!("counter of {} clamped at zero after request {}", req.client_id, req.id);
            self.clamps += 1;
        }
        Ok(())
    }
}

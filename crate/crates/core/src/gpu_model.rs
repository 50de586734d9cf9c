//! Parametric cost model of one GPU serving engine with continuous batching.
//!
//! An iteration costs
//! `a_p*P + b_p*P^2 + a_d + b_d*ctx + (h if the batch composition changed)`
//! milliseconds, where `P` is the number of prompt tokens prefilled in this
//! iteration and `ctx` the number of KV tokens resident in the batch.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::Request;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerfParams {
    /// ms per prompt token (`a_p`).
    pub prefill_linear_ms: f64,
    /// ms per squared prompt token (`b_p`).
    pub prefill_quad_ms: f64,
    /// Fixed ms per iteration (`a_d`).
    pub decode_base_ms: f64,
    /// ms per resident KV token per iteration (`b_d`).
    pub decode_per_ctx_token_ms: f64,
    /// ms charged when the batch composition changes (`h`).
    pub refresh_overhead_ms: f64,
    pub mem_per_token_bytes: u64,
    pub mem_capacity_bytes: u64,
    pub max_batch: usize,
}

impl Default for PerfParams {
    fn default() -> Self {
        PerfParams {
            prefill_linear_ms: 0.05,
            prefill_quad_ms: 1e-6,
            decode_base_ms: 5.0,
            decode_per_ctx_token_ms: 0.002,
            refresh_overhead_ms: 15.0,
            mem_per_token_bytes: 500_000,
            mem_capacity_bytes: 60_000_000_000,
            max_batch: 64,
        }
    }
}

impl PerfParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("prefill_linear_ms", self.prefill_linear_ms),
            ("prefill_quad_ms", self.prefill_quad_ms),
            ("decode_base_ms", self.decode_base_ms),
            ("decode_per_ctx_token_ms", self.decode_per_ctx_token_ms),
            ("refresh_overhead_ms", self.refresh_overhead_ms),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        if self.mem_per_token_bytes == 0 {
            return Err(Error::config("mem_per_token_bytes", "must be > 0"));
        }
        if self.mem_capacity_bytes < self.mem_per_token_bytes {
            return Err(Error::config(
                "mem_capacity_bytes",
                "must hold at least one token",
            ));
        }
        if self.max_batch == 0 {
            return Err(Error::config("max_batch", "must be > 0"));
        }
        Ok(())
    }

    /// KV tokens that fit in GPU memory.
    pub fn capacity_tokens(&self) -> u64 {
        self.mem_capacity_bytes / self.mem_per_token_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMember {
    pub request_id: u64,
    pub input_tokens: u32,
    pub generated: u32,
    /// Output tokens reserved at admission (the predicted length).
    pub reserved_output: u32,
}

impl BatchMember {
    fn resident(&self) -> u64 {
        self.input_tokens as u64 + self.generated as u64
    }

    fn committed(&self) -> u64 {
        self.input_tokens as u64 + self.generated.max(self.reserved_output) as u64
    }
}

/// Requests resident in the running batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchState {
    members: Vec<BatchMember>,
    /// Whether membership changed since the previous iteration.
    pub composition_changed: bool,
}

impl BatchState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self) -> &[BatchMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, request_id: u64) -> bool {
        self.members.iter().any(|m| m.request_id == request_id)
    }

    /// `sum(input_tokens + generated)` over members.
    pub fn resident_kv_tokens(&self) -> u64 {
        self.members.iter().map(BatchMember::resident).sum()
    }

    /// Tokens held against memory: each member's reservation, or its actual
    /// footprint once it has generated past the reservation.
    pub fn committed_kv_tokens(&self) -> u64 {
        self.members.iter().map(BatchMember::committed).sum()
    }

    pub fn admit(&mut self, req: &Request, reserved_output: u32) {
        self.members.push(BatchMember {
            request_id: req.id,
            input_tokens: req.input_tokens,
            generated: 0,
            reserved_output,
        });
        self.composition_changed = true;
    }

    pub fn member_mut(&mut self, request_id: u64) -> Option<&mut BatchMember> {
        self.members.iter_mut().find(|m| m.request_id == request_id)
    }

    pub fn remove(&mut self, request_id: u64) -> Option<BatchMember> {
        let pos = self.members.iter().position(|m| m.request_id == request_id)?;
        self.composition_changed = true;
        Some(self.members.remove(pos))
    }
}

/// Split of one iteration's duration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationCost {
    pub busy_ms: f64,
    pub overhead_ms: f64,
}

impl IterationCost {
    pub fn total_ms(&self) -> f64 {
        self.busy_ms + self.overhead_ms
    }
}

pub fn iteration_cost(batch: &BatchState, new_prefill_tokens: u64, params: &PerfParams) -> IterationCost {
    let p = new_prefill_tokens as f64;
    let busy_ms = params.prefill_linear_ms * p
        + params.prefill_quad_ms * p * p
        + params.decode_base_ms
        + params.decode_per_ctx_token_ms * batch.resident_kv_tokens() as f64;
    let overhead_ms = if batch.composition_changed {
        params.refresh_overhead_ms
    } else {
        0.0
    };
    IterationCost { busy_ms, overhead_ms }
}

/// Duration of one engine iteration in milliseconds.
pub fn iteration_time(batch: &BatchState, new_prefill_tokens: u64, params: &PerfParams) -> f64 {
    iteration_cost(batch, new_prefill_tokens, params).total_ms()
}

/// Whether `candidate` can join the batch with `predicted_out` tokens reserved.
pub fn can_fit(batch: &BatchState, candidate: &Request, predicted_out: u32, params: &PerfParams) -> bool {
    if batch.len() + 1 > params.max_batch {
        return false;
    }
    let need = batch.committed_kv_tokens()
        + candidate.input_tokens as u64
        + predicted_out as u64;
    need as u128 * params.mem_per_token_bytes as u128 <= params.mem_capacity_bytes as u128
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub bucket_upper: u32,
    pub latency_ms: f64,
    pub gpu_util: f64,
    pub tps: f64,
}

/// Offline map from output-length bucket to expected (latency, util, tps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuProfile {
    pub entries: Vec<ProfileEntry>,
}

impl GpuProfile {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::config("profile", "must have at least one bucket"));
        }
        if self
            .entries
            .windows(2)
            .any(|w| w[0].bucket_upper >= w[1].bucket_upper)
        {
            return Err(Error::config("profile", "bucket bounds must strictly increase"));
        }
        for e in &self.entries {
            let positive = |v: f64| v.is_finite() && v > 0.0;
            if !(0.0..=1.0).contains(&e.gpu_util) || !positive(e.tps) || !positive(e.latency_ms) {
                return Err(Error::config(
                    "profile",
                    format!("bucket {} has out-of-range metrics", e.bucket_upper),
                ));
            }
        }
        Ok(())
    }

    /// Index of the bucket containing `tokens`, clamped to the last bucket.
    pub fn bucket_index(&self, tokens: u32) -> usize {
        self.entries
            .partition_point(|e| e.bucket_upper < tokens)
            .min(self.entries.len().saturating_sub(1))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let map = |e: csv::Error| Error::Consistency(format!("csv write: {e}"));
        wr.write_record(["bucket_upper", "latency_ms", "gpu_util", "tps"])
            .map_err(map)?;
        for e in &self.entries {
            wr.write_record([
                e.bucket_upper.to_string(),
                e.latency_ms.to_string(),
                e.gpu_util.to_string(),
                e.tps.to_string(),
            ])
            .map_err(map)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let bad = |m: String| Error::TraceRow {
                path: "<profile>".into(),
                line,
                message: m,
            };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| bad(format!("column {k} is not a number")))
            };
            entries.push(ProfileEntry {
                bucket_upper: num(0)? as u32,
                latency_ms: num(1)?,
                gpu_util: num(2)?,
                tps: num(3)?,
            });
        }
        let p = GpuProfile { entries };
        p.validate()?;
        Ok(p)
    }
}

/// Powers of two from 1 to 4096.
pub fn default_bucket_bounds() -> Vec<u32> {
    (0..=12).map(|k| 1u32 << k).collect()
}

/// Representative output length of the bucket `(lower, upper]`.
pub fn bucket_midpoint(lower: u32, upper: u32) -> u32 {
    ((lower as u64 + 1 + upper as u64) / 2).max(1) as u32
}

/// Outcome of running one request alone on an idle engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoloRun {
    pub latency_ms: f64,
    pub busy_ms: f64,
    pub overhead_ms: f64,
}

/// Simulate a single request: one prefill iteration (which emits the first
/// token) followed by one decode iteration per further token.
pub fn solo_run(input_tokens: u32, output_tokens: u32, params: &PerfParams) -> SoloRun {
    let req = Request {
        id: 0,
        client_id: String::new(),
        arrival_time: 0.0,
        input_tokens,
        true_output_tokens: output_tokens,
        category_tag: None,
    };
    let mut batch = BatchState::new();
    batch.admit(&req, output_tokens);
    let mut run = SoloRun {
        latency_ms: 0.0,
        busy_ms: 0.0,
        overhead_ms: 0.0,
    };
    let mut prefill = input_tokens as u64;
    for _ in 0..output_tokens.max(1) {
        let c = iteration_cost(&batch, prefill, params);
        run.busy_ms += c.busy_ms;
        run.overhead_ms += c.overhead_ms;
        prefill = 0;
        batch.composition_changed = false;
        if let Some(m) = batch.member_mut(0) {
            m.generated += 1;
        }
    }
    run.latency_ms = run.busy_ms + run.overhead_ms;
    run
}

/// Build the offline profile by running each bucket's midpoint length alone.
pub fn build_profile(params: &PerfParams, bucket_bounds: &[u32], reference_input_tokens: u32) -> Result<GpuProfile> {
    if bucket_bounds.is_empty() || bucket_bounds[0] == 0 {
        return Err(Error::config("bucket_bounds", "must be non-empty and positive"));
    }
    if bucket_bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("bucket_bounds", "must be strictly increasing"));
    }
    let mut lower = 0;
    let entries = bucket_bounds
        .iter()
        .map(|&upper| {
            let out = bucket_midpoint(lower, upper);
            lower = upper;
            let run = solo_run(reference_input_tokens, out, params);
            ProfileEntry {
                bucket_upper: upper,
                latency_ms: run.latency_ms,
                gpu_util: run.busy_ms / (run.busy_ms + run.overhead_ms),
                tps: (reference_input_tokens as f64 + out as f64) / (run.latency_ms / 1000.0),
            }
        })
        .collect();
    Ok(GpuProfile { entries })
}

//! Fairness and performance metrics computed from a finished run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, EventKind, EventLog, SimOutput};
use crate::error::{Error, Result};
use crate::scheduler::{holistic_score, ClientState};

/// Jain's fairness index `(Σx)² / (n·Σx²)`. An all-zero input counts as
/// perfectly fair.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Metric("jain index of an empty set".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Metric("jain index needs finite non-negative values".into()));
    }
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        log::debug!("jain index of all-zero values taken as 1");
        return Ok(1.0);
    }
    let j = sum * sum / (values.len() as f64 * sq);
    // Guard against rounding just outside [1/n, 1].
    Ok(j.clamp(1.0 / values.len() as f64, 1.0))
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub count: usize,
}

impl Percentiles {
    pub fn of(mut values: Vec<f64>) -> Option<Self> {
        values.sort_by(f64::total_cmp);
        Some(Percentiles {
            p50: percentile(&values, 50.0)?,
            p90: percentile(&values, 90.0)?,
            p99: percentile(&values, 99.0)?,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtftStats {
    pub per_client: BTreeMap<String, Percentiles>,
    pub overall: Percentiles,
}

/// Time-to-first-token percentiles, per client and overall.
pub fn ttft_stats(log: &EventLog) -> Result<TtftStats> {
    let arrivals: BTreeMap<u64, f64> = log
        .of_kind(EventKind::Arrived)
        .map(|e| (e.request_id, e.time))
        .collect();
    let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in log.of_kind(EventKind::FirstToken) {
        let t0 = arrivals.get(&e.request_id).ok_or_else(|| {
            Error::Metric(format!("first token without arrival for request {}", e.request_id))
        })?;
        per.entry(e.client_id.clone()).or_default().push(e.time - t0);
    }
    let all: Vec<f64> = per.values().flatten().copied().collect();
    let overall = Percentiles::of(all).ok_or_else(|| Error::Metric("no first-token events".into()))?;
    Ok(TtftStats {
        per_client: per
            .into_iter()
            .filter_map(|(c, v)| Percentiles::of(v).map(|p| (c, p)))
            .collect(),
        overall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDifference {
    pub max: f64,
    pub avg: f64,
    pub var: f64,
    /// `(window end, max pairwise gap)`.
    pub series: Vec<(f64, f64)>,
}

/// Window end times `w, 2w, ...` up to `end`, plus `end` itself when it is
/// not on a boundary.
fn window_ends(window: f64, end: f64) -> Vec<f64> {
    let n = (end / window + 1e-9).floor() as u64;
    let mut ts: Vec<f64> = (1..=n).map(|k| k as f64 * window).collect();
    if ts.last().is_none_or(|t| end - t > 1e-9) && end > 0.0 {
        ts.push(end);
    }
    ts
}

/// Gap between the best- and worst-served client in accumulated weighted
/// service, sampled at each window end.
pub fn service_difference(
    log: &EventLog,
    weights: &BTreeMap<String, f64>,
    output_weight: f64,
    window: f64,
    end: f64,
) -> Result<ServiceDifference> {
    if weights.len() < 2 {
        return Err(Error::Metric("service difference needs at least two clients".into()));
    }
    let completions: Vec<(f64, &str, f64)> = log
        .of_kind(EventKind::Completed)
        .map(|e| {
            let w = weights.get(&e.client_id).copied().unwrap_or(1.0);
            let tokens = e.input_tokens.unwrap_or(0) as f64 + output_weight * e.output_tokens.unwrap_or(0) as f64;
            (e.time, e.client_id.as_str(), w * tokens)
        })
        .collect();
    let mut acc: BTreeMap<&str, f64> = weights.keys().map(|c| (c.as_str(), 0.0)).collect();
    let mut idx = 0;
    let mut series = Vec::new();
    for t in window_ends(window, end) {
        while idx < completions.len() && completions[idx].0 <= t + 1e-12 {
            *acc.entry(completions[idx].1).or_insert(0.0) += completions[idx].2;
            idx += 1;
        }
        let hi = acc.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = acc.values().copied().fold(f64::INFINITY, f64::min);
        series.push((t, hi - lo));
    }
    if series.is_empty() {
        return Err(Error::Metric("run too short for a service-difference sample".into()));
    }
    let n = series.len() as f64;
    let avg = series.iter().map(|s| s.1).sum::<f64>() / n;
    let var = series.iter().map(|s| (s.1 - avg).powi(2)).sum::<f64>() / n;
    let max = series.iter().map(|s| s.1).fold(0.0, f64::max);
    Ok(ServiceDifference { max, avg, var, series })
}

/// Accumulated weighted service of each client over the whole log.
pub fn service_totals(log: &EventLog, weights: &BTreeMap<String, f64>, output_weight: f64) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, f64> = weights.keys().map(|c| (c.clone(), 0.0)).collect();
    for e in log.of_kind(EventKind::Completed) {
        let w = weights.get(&e.client_id).copied().unwrap_or(1.0);
        let tokens = e.input_tokens.unwrap_or(0) as f64 + output_weight * e.output_tokens.unwrap_or(0) as f64;
        *acc.entry(e.client_id.clone()).or_insert(0.0) += w * tokens;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRate {
    pub time_s: f64,
    pub client_id: String,
    /// Weighted tokens per second completed in the window.
    pub rate: f64,
}

pub fn service_rates(
    log: &EventLog,
    weights: &BTreeMap<String, f64>,
    output_weight: f64,
    window: f64,
    end: f64,
) -> Vec<ServiceRate> {
    let ends = window_ends(window, end);
    let mut per: BTreeMap<&str, Vec<f64>> = weights.keys().map(|c| (c.as_str(), vec![0.0; ends.len()])).collect();
    for e in log.of_kind(EventKind::Completed) {
        let Some(k) = ends.iter().position(|&t| e.time <= t + 1e-12) else { continue };
        let w = weights.get(&e.client_id).copied().unwrap_or(1.0);
        let tokens = e.input_tokens.unwrap_or(0) as f64 + output_weight * e.output_tokens.unwrap_or(0) as f64;
        if let Some(v) = per.get_mut(e.client_id.as_str()) {
            v[k] += w * tokens;
        }
    }
    let mut rows = Vec::new();
    for (k, &t) in ends.iter().enumerate() {
        let width = if k == 0 { t } else { t - ends[k - 1] };
        for (c, v) in &per {
            rows.push(ServiceRate {
                time_s: t,
                client_id: c.to_string(),
                rate: if width > 0.0 { v[k] / width } else { 0.0 },
            });
        }
    }
    rows
}

/// Summary of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub predictor: String,
    pub clients: Vec<String>,
    pub completed: usize,
    pub rejected: u64,
    /// Output tokens of completed requests.
    pub completed_tokens: u64,
    pub duration_s: f64,
    /// Input plus output tokens of completed requests per second.
    pub throughput: f64,
    pub mean_util: f64,
    /// Jain index over per-client holistic scores at the end of the run.
    pub jain_hf: f64,
    /// `(time, jain)` over the counter snapshots.
    pub jain_hf_series: Vec<(f64, f64)>,
    /// Jain index over per-client p90 time to first token.
    pub jain_ttft_p90: f64,
    /// Jain index over per-client accumulated weighted service.
    pub jain_service: f64,
    pub final_hf: BTreeMap<String, f64>,
    pub ttft: Option<TtftStats>,
    pub e2e: Option<Percentiles>,
    pub service_difference: Option<ServiceDifference>,
    pub service_rates: Vec<ServiceRate>,
}

/// Holistic scores of all clients, normalised over all clients.
pub fn final_hf(clients: &[ClientState], cfg: &EngineConfig) -> BTreeMap<String, f64> {
    let params = cfg.ledger_params();
    let pool: Vec<&ClientState> = clients.iter().collect();
    clients
        .iter()
        .map(|c| (c.client_id.clone(), holistic_score(c, &pool, params)))
        .collect()
}

pub fn build_report(
    out: &SimOutput,
    cfg: &EngineConfig,
    weights: &BTreeMap<String, f64>,
    predictor: &str,
) -> Result<SimReport> {
    let output_weight = cfg.ledger_params().output_weight;
    let end = out.stats.end_time;
    let log = &out.log;
    let completed: Vec<_> = log.of_kind(EventKind::Completed).collect();
    let completed_tokens: u64 = completed.iter().map(|e| e.output_tokens.unwrap_or(0) as u64).sum();
    let processed: u64 = completed
        .iter()
        .map(|e| (e.input_tokens.unwrap_or(0) + e.output_tokens.unwrap_or(0)) as u64)
        .sum();

    let hf = final_hf(&out.clients, cfg);
    let hf_values: Vec<f64> = hf.values().copied().collect();
    let jain_hf = if hf_values.is_empty() { 1.0 } else { jain_index(&hf_values)? };

    let mut by_time: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for s in &out.counters {
        by_time.entry(s.time_s.to_bits()).or_default().push(s.hf);
    }
    let mut jain_hf_series = Vec::with_capacity(by_time.len());
    for (bits, v) in by_time {
        jain_hf_series.push((f64::from_bits(bits), jain_index(&v)?));
    }
    jain_hf_series.sort_by(|a, b| a.0.total_cmp(&b.0));

    let ttft = ttft_stats(log).ok();
    let jain_ttft_p90 = match &ttft {
        Some(t) => {
            let p90s: Vec<f64> = t.per_client.values().map(|p| p.p90).collect();
            jain_index(&p90s)?
        }
        None => 1.0,
    };
    let totals: Vec<f64> = service_totals(log, weights, output_weight).into_values().collect();
    let jain_service = if totals.is_empty() { 1.0 } else { jain_index(&totals)? };
    let arrivals: BTreeMap<u64, f64> = log.of_kind(EventKind::Arrived).map(|e| (e.request_id, e.time)).collect();
    let e2e = Percentiles::of(
        completed
            .iter()
            .filter_map(|e| arrivals.get(&e.request_id).map(|t0| e.time - t0))
            .collect(),
    );

    let service_difference = if weights.len() >= 2 && end > 0.0 {
        Some(service_difference(log, weights, output_weight, cfg.options.report_window, end)?)
    } else {
        None
    };

    Ok(SimReport {
        policy: cfg.policy.name().to_string(),
        predictor: predictor.to_string(),
        clients: weights.keys().cloned().collect(),
        completed: completed.len(),
        rejected: out.stats.rejected,
        completed_tokens,
        duration_s: end,
        throughput: if end > 0.0 { processed as f64 / end } else { 0.0 },
        mean_util: if end > 0.0 { (out.stats.busy_ms / (end * 1000.0)).min(1.0) } else { 0.0 },
        jain_hf,
        jain_hf_series,
        jain_ttft_p90,
        jain_service,
        final_hf: hf,
        ttft,
        e2e,
        service_difference,
        service_rates: service_rates(log, weights, output_weight, cfg.options.report_window, end),
    })
}

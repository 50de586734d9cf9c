//! Experiment orchestration: per-seed runs, ablation grids and alpha sweeps.
//!
//! Each simulation owns its engine; runs only share immutable inputs
//! (traces, trained predictors), so they can be fanned out with rayon.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{default_alphas, default_grid, GridCell, PreparedPredictor, RunConfig};
use crate::engine::{run, SimOutput};
use crate::error::{Error, Result};
use crate::metrics::{build_report, SimReport};
use crate::scheduler::{EquinoxParams, PolicySpec};
use crate::workload::Trace;

/// Everything produced for one (config, seed) pair.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trace_hash: String,
    pub output: SimOutput,
    pub report: SimReport,
}

/// Report file contents: the result plus full provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub label: String,
    pub seed: u64,
    pub trace_hash: String,
    pub report: SimReport,
}

fn weights(trace: &Trace) -> BTreeMap<String, f64> {
    let mut w: BTreeMap<String, f64> = trace.clients.iter().map(|c| (c.client_id.clone(), c.weight)).collect();
    for r in &trace.requests {
        w.entry(r.client_id.clone()).or_insert(1.0);
    }
    w
}

/// Simulate `trace` under `policy` with a prepared predictor.
pub fn simulate(
    cfg: &RunConfig,
    policy: &PolicySpec,
    predictor: &PreparedPredictor,
    predictor_label: &str,
    trace: &Trace,
    seed: u64,
) -> Result<SeedRun> {
    let engine = cfg.engine_config(policy);
    let p = predictor.for_seed(seed);
    let output = run(trace, &engine, &p)?;
    let report = build_report(&output, &engine, &weights(trace), predictor_label)?;
    Ok(SeedRun { seed, trace_hash: trace.content_hash(), output, report })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Consistency(format!("thread pool: {e}")))
}

/// Run the configured policy/predictor for every seed.
pub fn run_seeds(cfg: &RunConfig, jobs: usize) -> Result<Vec<SeedRun>> {
    let predictor = cfg.predictor.prepare()?;
    let label = cfg.predictor.label();
    pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let trace = cfg.scenario.materialize(seed)?;
                simulate(cfg, &cfg.policy, &predictor, &label, &trace, seed)
            })
            .collect()
    })
}

/// Mean of the headline numbers over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub policy: String,
    pub predictor: String,
    pub seeds: Vec<u64>,
    pub trace_hashes: Vec<String>,
    pub max_diff: f64,
    pub avg_diff: f64,
    pub var_diff: f64,
    pub jain_hf: f64,
    pub jain_ttft_p90: f64,
    pub throughput: f64,
    pub mean_util: f64,
}

pub fn aggregate(label: &str, runs: &[SeedRun]) -> Aggregate {
    let n = runs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let diff = |r: &SeedRun, f: fn(&crate::metrics::ServiceDifference) -> f64| {
        r.report.service_difference.as_ref().map_or(0.0, f)
    };
    Aggregate {
        label: label.to_string(),
        policy: runs.first().map(|r| r.report.policy.clone()).unwrap_or_default(),
        predictor: runs.first().map(|r| r.report.predictor.clone()).unwrap_or_default(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        trace_hashes: runs.iter().map(|r| r.trace_hash.clone()).collect(),
        max_diff: mean(&|r| diff(r, |d| d.max)),
        avg_diff: mean(&|r| diff(r, |d| d.avg)),
        var_diff: mean(&|r| diff(r, |d| d.var)),
        jain_hf: mean(&|r| r.report.jain_hf),
        jain_ttft_p90: mean(&|r| r.report.jain_ttft_p90),
        throughput: mean(&|r| r.report.throughput),
        mean_util: mean(&|r| r.report.mean_util),
    }
}

/// Result of an ablation: one aggregate row per grid cell, plus the
/// per-seed runs in the same order.
pub struct Ablation {
    pub rows: Vec<Aggregate>,
    pub runs: Vec<Vec<SeedRun>>,
}

/// Run every grid cell on the same per-seed traces.
pub fn run_ablation(cfg: &RunConfig, grid: &[GridCell], jobs: usize) -> Result<Ablation> {
    let traces: Vec<(u64, Trace)> = cfg
        .seeds
        .iter()
        .map(|&s| cfg.scenario.materialize(s).map(|t| (s, t)))
        .collect::<Result<_>>()?;
    let predictors: Vec<PreparedPredictor> = grid.iter().map(|c| c.predictor.prepare()).collect::<Result<_>>()?;
    let jobs_list: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|c| (0..traces.len()).map(move |t| (c, t))).collect();
    let results: Vec<SeedRun> = pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|&(c, t)| {
                let cell = &grid[c];
                let (seed, trace) = &traces[t];
                simulate(cfg, &cell.policy, &predictors[c], &cell.predictor.label(), trace, *seed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut runs: Vec<Vec<SeedRun>> = vec![Vec::new(); grid.len()];
    for ((c, _), r) in jobs_list.into_iter().zip(results) {
        runs[c].push(r);
    }
    let rows = grid.iter().zip(&runs).map(|(cell, r)| aggregate(&cell.label, r)).collect();
    Ok(Ablation { rows, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub jain_ttft_p90: f64,
    pub throughput: f64,
    pub jain_ttft_p90_norm: f64,
    pub throughput_norm: f64,
}

pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Per-alpha aggregates, same order as `rows`.
    pub cells: Vec<Aggregate>,
    /// Per-alpha, per-seed runs.
    pub runs: Vec<Vec<SeedRun>>,
}

/// Equinox with each alpha (beta = 1 - alpha), other parameters taken from
/// the configured Equinox policy if any.
pub fn sweep_alpha(cfg: &RunConfig, alphas: &[f64], jobs: usize) -> Result<Sweep> {
    let base = match &cfg.policy {
        PolicySpec::Equinox(p) => p.clone(),
        _ => EquinoxParams::default(),
    };
    let grid: Vec<GridCell> = alphas
        .iter()
        .map(|&a| GridCell {
            label: format!("alpha={a}"),
            policy: PolicySpec::Equinox(EquinoxParams { alpha: a, beta: 1.0 - a, ..base.clone() }),
            predictor: cfg.predictor.clone(),
        })
        .collect();
    let ab = run_ablation(cfg, &grid, jobs)?;
    let max_j = ab.rows.iter().map(|r| r.jain_ttft_p90).fold(0.0, f64::max);
    let max_t = ab.rows.iter().map(|r| r.throughput).fold(0.0, f64::max);
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    let rows = alphas
        .iter()
        .zip(&ab.rows)
        .map(|(&alpha, r)| SweepRow {
            alpha,
            jain_ttft_p90: r.jain_ttft_p90,
            throughput: r.throughput,
            jain_ttft_p90_norm: norm(r.jain_ttft_p90, max_j),
            throughput_norm: norm(r.throughput, max_t),
        })
        .collect();
    Ok(Sweep { rows, cells: ab.rows, runs: ab.runs })
}

pub fn grid_or_default(cfg: &RunConfig) -> Vec<GridCell> {
    cfg.grid.clone().unwrap_or_else(default_grid)
}

pub fn alphas_or_default(cfg: &RunConfig) -> Vec<f64> {
    cfg.alphas.clone().unwrap_or_else(default_alphas)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write one run's report, time series and (optionally) event log into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, label: &str, run: &SeedRun, event_log: bool) -> Result<()> {
    create_dir(dir)?;
    let record = RunRecord {
        config: cfg.clone(),
        label: label.to_string(),
        seed: run.seed,
        trace_hash: run.trace_hash.clone(),
        report: run.report.clone(),
    };
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    let mut counters = Vec::new();
    run.output.write_counters_csv(&mut counters)?;
    write_file(&dir.join("counters.csv"), &counters)?;
    let mut util = Vec::new();
    run.output.write_util_csv(&mut util)?;
    write_file(&dir.join("util.csv"), &util)?;
    if event_log {
        write_file(&dir.join("events.ndjson"), &run.output.log.to_ndjson()?)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_file(path, serde_json::to_string_pretty(value)?.as_bytes())
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregated output of `run`, `ablation` or `sweep-alpha`, with the
/// resolved config for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub config: RunConfig,
    pub rows: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fixed-order summary table.
pub fn summary_table(rows: &[Aggregate]) -> String {
    let mut out = format!(
        "{:<20} {:<8} {:<20} {:>12} {:>12} {:>14} {:>8} {:>13} {:>11} {:>9}\n",
        "label", "policy", "predictor", "max_diff", "avg_diff", "var_diff", "jain_hf", "jain_ttft_p90", "throughput", "mean_util"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:<8} {:<20} {:>12.1} {:>12.1} {:>14.4e} {:>8.4} {:>13.4} {:>11.1} {:>9.4}\n",
            r.label, r.policy, r.predictor, r.max_diff, r.avg_diff, r.var_diff, r.jain_hf, r.jain_ttft_p90, r.throughput, r.mean_util
        ));
    }
    out
}

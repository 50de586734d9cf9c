//! Output-length prediction and the token -> (latency, util, tps) mapping.
//!
//! Four predictors share one contract:
//!
//! * [`Predictor::Oracle`] returns the true output length.
//! * [`Predictor::NoisyOracle`] adds Laplace noise whose scale equals the
//!   target mean absolute error.
//! * [`Predictor::SingleProxy`] queries one conditional-median table fitted
//!   to the whole corpus.
//! * [`Predictor::Mope`] routes the request to a length bucket and queries
//!   that bucket's expert table.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpu_model::GpuProfile;
use crate::workload::{bucket_of, Request};

/// Predicted output length plus the mapped performance metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted_output_tokens: u32,
    pub predicted_latency_ms: f64,
    pub predicted_gpu_util: f64,
    pub predicted_tps: f64,
}

/// Look up the profile bucket holding `predicted_out`; lengths beyond the
/// last bucket use the last bucket.
pub fn map_metrics(predicted_out: u32, profile: &GpuProfile) -> PredictionRecord {
    let e = &profile.entries[profile.bucket_index(predicted_out)];
    PredictionRecord {
        predicted_output_tokens: predicted_out,
        predicted_latency_ms: e.latency_ms,
        predicted_gpu_util: e.gpu_util,
        predicted_tps: e.tps,
    }
}

/// Metrics measured for a completed request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub output_tokens: u32,
    pub latency_ms: f64,
    pub gpu_util: f64,
    pub tps: f64,
}

/// EMA-refresh the bucket containing `obs.output_tokens`, in place.
pub fn update_map_in_place(profile: &mut GpuProfile, obs: &Observation, ema_alpha: f64) {
    let idx = profile.bucket_index(obs.output_tokens);
    let e = &mut profile.entries[idx];
    let mix = |old: f64, new: f64| (1.0 - ema_alpha) * old + ema_alpha * new;
    e.latency_ms = mix(e.latency_ms, obs.latency_ms);
    e.gpu_util = mix(e.gpu_util, obs.gpu_util).clamp(0.0, 1.0);
    e.tps = mix(e.tps, obs.tps);
}

pub fn update_map(profile: &GpuProfile, obs: &Observation, ema_alpha: f64) -> GpuProfile {
    let mut p = profile.clone();
    update_map_in_place(&mut p, obs, ema_alpha);
    p
}

/// One input-length bin of an expert table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertBin {
    pub input_upper: u32,
    pub predicted_output_tokens: u32,
}

/// Conditional-median regression table for one output bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModel {
    pub bucket: usize,
    pub bins: Vec<ExpertBin>,
}

impl ExpertModel {
    /// Fit `n_bins` input-length bins by quantile and store each bin's median output.
    pub fn fit(bucket: usize, samples: &[(u32, u32)], n_bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Training(format!("bucket {bucket} has no samples")));
        }
        let mut by_input: Vec<(u32, u32)> = samples.to_vec();
        by_input.sort_unstable();
        let n = by_input.len();
        let n_bins = n_bins.max(1);

        let mut edges: Vec<u32> = (1..n_bins)
            .map(|j| by_input[(j * n / n_bins).min(n - 1)].0)
            .collect();
        edges.push(u32::MAX);
        edges.dedup();

        let mut bins = Vec::with_capacity(edges.len());
        let mut start = 0;
        for &upper in &edges {
            let end = by_input.partition_point(|s| s.0 <= upper);
            if end > start {
                let mut outs: Vec<u32> = by_input[start..end].iter().map(|s| s.1).collect();
                bins.push(ExpertBin {
                    input_upper: upper,
                    predicted_output_tokens: lower_median(&mut outs),
                });
                start = end;
            }
        }
        if let Some(last) = bins.last_mut() {
            last.input_upper = u32::MAX;
        }
        Ok(ExpertModel { bucket, bins })
    }

    pub fn predict(&self, input_tokens: u32) -> u32 {
        let i = self
            .bins
            .partition_point(|b| b.input_upper < input_tokens)
            .min(self.bins.len() - 1);
        self.bins[i].predicted_output_tokens
    }
}

fn lower_median(values: &mut [u32]) -> u32 {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u32], pct: f64) -> u32 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Length-plus-keyword classifier that picks an output bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    /// `k - 1` increasing input-length cut points for `k` buckets.
    pub input_len_thresholds: Vec<u32>,
    /// Per-tag distribution over buckets (rows sum to 1).
    pub keyword_scores: BTreeMap<String, Vec<f64>>,
    pub mix_weight: f64,
}

/// Routing decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub bucket: usize,
    /// The tag was missing or unseen and only the length signal was used.
    pub length_only: bool,
}

impl RouterModel {
    pub fn buckets(&self) -> usize {
        self.input_len_thresholds.len() + 1
    }

    fn length_bucket(&self, input_tokens: u32) -> usize {
        self.input_len_thresholds
            .partition_point(|&t| t <= input_tokens)
    }
}

/// Pick the bucket maximising `mix * length_score + (1 - mix) * keyword_score`.
/// Ties go to the shorter bucket.
pub fn route(router: &RouterModel, req: &Request) -> Route {
    let lb = router.length_bucket(req.input_tokens);
    let Some(row) = req
        .category_tag
        .as_ref()
        .and_then(|t| router.keyword_scores.get(t))
    else {
        return Route {
            bucket: lb,
            length_only: true,
        };
    };
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (b, kw) in row.iter().enumerate() {
        let len_score = if b == lb { 1.0 } else { 0.0 };
        let s = router.mix_weight * len_score + (1.0 - router.mix_weight) * kw;
        if s > best_score {
            best = b;
            best_score = s;
        }
    }
    Route {
        bucket: best,
        length_only: false,
    }
}

/// Trained router plus one expert per bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MopeModel {
    /// Output-length bucket upper bounds (inclusive), `k - 1` of them.
    pub output_bounds: Vec<u32>,
    pub router: RouterModel,
    pub experts: Vec<ExpertModel>,
}

impl MopeModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MopeModel = serde_json::from_str(s)?;
        if m.experts.len() != m.router.buckets() || m.output_bounds.len() + 1 != m.experts.len() {
            return Err(Error::config("mope", "router, bounds and experts disagree on bucket count"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MopeTraining {
    pub experts: usize,
    /// Explicit bucket percentiles; derived from `experts` when empty.
    pub percentiles: Vec<f64>,
    pub input_bins: usize,
    pub min_corpus: usize,
}

impl Default for MopeTraining {
    fn default() -> Self {
        MopeTraining {
            experts: 3,
            percentiles: Vec::new(),
            input_bins: 8,
            min_corpus: 100,
        }
    }
}

impl MopeTraining {
    pub fn with_experts(experts: usize) -> Self {
        MopeTraining {
            experts,
            ..Self::default()
        }
    }

    pub fn resolved_percentiles(&self) -> Vec<f64> {
        if !self.percentiles.is_empty() {
            return self.percentiles.clone();
        }
        match self.experts {
            3 => vec![33.0, 66.0],
            k => (1..k).map(|j| (100.0 * j as f64 / k as f64).round()).collect(),
        }
    }
}

/// Train router and experts on a corpus with known output lengths.
pub fn train_mope(corpus: &[Request], cfg: &MopeTraining) -> Result<MopeModel> {
    if corpus.len() < cfg.min_corpus {
        return Err(Error::Training(format!(
            "corpus has {} requests, need at least {}",
            corpus.len(),
            cfg.min_corpus
        )));
    }
    let pcts = cfg.resolved_percentiles();
    if pcts.iter().any(|p| !(*p > 0.0 && *p < 100.0)) || pcts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "percentiles",
            "must be increasing and inside (0, 100)",
        ));
    }

    let mut outs: Vec<u32> = corpus.iter().map(|r| r.true_output_tokens).collect();
    outs.sort_unstable();
    let mut output_bounds: Vec<u32> = pcts.iter().map(|&p| nearest_rank(&outs, p)).collect();
    output_bounds.dedup();
    if output_bounds.len() != pcts.len() {
        return Err(Error::Training(
            "percentile boundaries collapse; corpus output lengths are too concentrated".into(),
        ));
    }
    let k = output_bounds.len() + 1;
    let labels: Vec<usize> = corpus
        .iter()
        .map(|r| bucket_of(&output_bounds, r.true_output_tokens))
        .collect();

    let mut experts = Vec::with_capacity(k);
    for b in 0..k {
        let samples: Vec<(u32, u32)> = corpus
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == b)
            .map(|(r, _)| (r.input_tokens, r.true_output_tokens))
            .collect();
        if samples.is_empty() {
            return Err(Error::Training(format!(
                "bucket {} (`{}`) has no members",
                b,
                crate::workload::bucket_label(b, k)
            )));
        }
        experts.push(ExpertModel::fit(b, &samples, cfg.input_bins)?);
    }

    let router = fit_router(corpus, &labels, k);
    Ok(MopeModel {
        output_bounds,
        router,
        experts,
    })
}

fn accuracy(router: &RouterModel, corpus: &[Request], labels: &[usize]) -> usize {
    corpus
        .iter()
        .zip(labels)
        .filter(|(r, &l)| route(router, r).bucket == l)
        .count()
}

fn fit_router(corpus: &[Request], labels: &[usize], k: usize) -> RouterModel {
    let mut counts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (r, &l) in corpus.iter().zip(labels) {
        if let Some(tag) = &r.category_tag {
            counts.entry(tag.clone()).or_insert_with(|| vec![0.0; k])[l] += 1.0;
        }
    }
    for row in counts.values_mut() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }

    let mut inputs: Vec<u32> = corpus.iter().map(|r| r.input_tokens).collect();
    inputs.sort_unstable();
    let n = inputs.len();
    let mut candidates: Vec<u32> = (1..64).map(|j| inputs[j * n / 64]).collect();
    candidates.dedup();

    // Start at the label proportions, then coordinate-ascend each cut point
    // on length-only accuracy.
    let mut cum = 0;
    let mut thresholds: Vec<u32> = (0..k - 1)
        .map(|b| {
            cum += labels.iter().filter(|&&l| l == b).count();
            inputs[cum.min(n - 1)]
        })
        .collect();
    for w in 1..thresholds.len() {
        thresholds[w] = thresholds[w].max(thresholds[w - 1] + 1);
    }
    let mut router = RouterModel {
        input_len_thresholds: thresholds,
        keyword_scores: BTreeMap::new(),
        mix_weight: 1.0,
    };
    for _ in 0..2 {
        for i in 0..k - 1 {
            let lo = if i == 0 { 0 } else { router.input_len_thresholds[i - 1] };
            let hi = router
                .input_len_thresholds
                .get(i + 1)
                .copied()
                .unwrap_or(u32::MAX);
            let mut best = (accuracy(&router, corpus, labels), router.input_len_thresholds[i]);
            for &c in candidates.iter().filter(|&&c| c > lo && c < hi) {
                router.input_len_thresholds[i] = c;
                let acc = accuracy(&router, corpus, labels);
                if acc > best.0 {
                    best = (acc, c);
                }
            }
            router.input_len_thresholds[i] = best.1;
        }
    }

    router.keyword_scores = counts;
    let mut best = (0, 0.0);
    for step in 0..=20 {
        router.mix_weight = step as f64 / 20.0;
        let acc = accuracy(&router, corpus, labels);
        if acc > best.0 {
            best = (acc, router.mix_weight);
        }
    }
    router.mix_weight = best.1;
    router
}

/// Fraction of `corpus` the router assigns to the request's true bucket.
pub fn router_accuracy(model: &MopeModel, corpus: &[Request]) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let hits = corpus
        .iter()
        .filter(|r| route(&model.router, r).bucket == bucket_of(&model.output_bounds, r.true_output_tokens))
        .count();
    hits as f64 / corpus.len() as f64
}

/// A configured output-length predictor.
#[derive(Debug, Clone)]
pub enum Predictor {
    Oracle,
    NoisyOracle { target_l1: f64, seed: u64 },
    SingleProxy(Option<ExpertModel>),
    Mope {
        model: Option<Arc<MopeModel>>,
        fallbacks: Arc<AtomicU64>,
    },
}

impl Predictor {
    pub fn noisy(target_l1: f64, seed: u64) -> Self {
        Predictor::NoisyOracle { target_l1, seed }
    }

    /// An untrained MoPE predictor; `predict` fails until trained.
    pub fn mope_untrained() -> Self {
        Predictor::Mope {
            model: None,
            fallbacks: Arc::default(),
        }
    }

    pub fn mope(model: MopeModel) -> Self {
        Predictor::Mope {
            model: Some(Arc::new(model)),
            fallbacks: Arc::default(),
        }
    }

    /// Single conditional-median table over the whole corpus.
    pub fn train_single(corpus: &[Request], input_bins: usize) -> Result<Self> {
        let samples: Vec<(u32, u32)> = corpus
            .iter()
            .map(|r| (r.input_tokens, r.true_output_tokens))
            .collect();
        Ok(Predictor::SingleProxy(Some(ExpertModel::fit(0, &samples, input_bins)?)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Oracle => "oracle",
            Predictor::NoisyOracle { .. } => "noisy_oracle",
            Predictor::SingleProxy(_) => "single",
            Predictor::Mope { .. } => "mope",
        }
    }

    /// Number of MoPE routings that fell back to length-only scoring.
    pub fn fallback_count(&self) -> u64 {
        match self {
            Predictor::Mope { fallbacks, .. } => fallbacks.load(Ordering::Relaxed),
            _ => 0,
        }
    }

    pub fn predict(&self, req: &Request) -> Result<u32> {
        match self {
            Predictor::Oracle => Ok(req.true_output_tokens),
            Predictor::NoisyOracle { target_l1, seed } => {
                Ok(noisy_prediction(req, *target_l1, *seed))
            }
            Predictor::SingleProxy(model) => model
                .as_ref()
                .map(|m| m.predict(req.input_tokens))
                .ok_or(Error::Untrained),
            Predictor::Mope { model, fallbacks } => {
                let model = model.as_ref().ok_or(Error::Untrained)?;
                let r = route(&model.router, req);
                if r.length_only {
                    fallbacks.fetch_add(1, Ordering::Relaxed);
                }
                Ok(model.experts[r.bucket].predict(req.input_tokens))
            }
        }
    }

    /// `predict` followed by `map_metrics`.
    pub fn predict_record(&self, req: &Request, profile: &GpuProfile) -> Result<PredictionRecord> {
        Ok(map_metrics(self.predict(req)?, profile))
    }
}

/// True length plus Laplace(0, `scale`) noise, rounded. When the noise would
/// push the prediction below one token it is mirrored, so the absolute error
/// always equals the drawn magnitude.
fn noisy_prediction(req: &Request, scale: f64, seed: u64) -> u32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(req.id);
    let u: f64 = rng.random::<f64>() - 0.5;
    let magnitude = -scale * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
    let truth = req.true_output_tokens as f64;
    let down = truth - magnitude;
    let pred = if u < 0.0 && down.round() >= 1.0 {
        down
    } else {
        truth + magnitude
    };
    pred.round().clamp(1.0, u32::MAX as f64) as u32
}

/// Mean absolute error of `predictor` over `corpus`.
pub fn l1_error(predictor: &Predictor, corpus: &[Request]) -> Result<f64> {
    if corpus.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in corpus {
        total += (predictor.predict(r)? as f64 - r.true_output_tokens as f64).abs();
    }
    Ok(total / corpus.len() as f64)
}

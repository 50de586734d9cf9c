//! Run configuration: one JSON document, strictly validated.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, EngineOptions};
use crate::error::{Error, Result};
use crate::gpu_model::PerfParams;
use crate::predictor::{train_mope, MopeModel, MopeTraining, Predictor};
use crate::scheduler::{EquinoxParams, PolicySpec, VtcCharge, VtcParams};
use crate::workload::{generate_corpus, generate_scenario, load_trace, CorpusSpec, ScenarioName, Trace};

fn default_duration() -> f64 {
    60.0
}

/// Where requests come from: a built-in preset or a CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<ScenarioName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
}

impl ScenarioSpec {
    pub fn preset(preset: ScenarioName, duration_s: f64) -> Self {
        ScenarioSpec { preset: Some(preset), trace: None, duration_s }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.preset, &self.trace) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::config("scenario", "set exactly one of `preset` or `trace`")),
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::config("duration_s", "must be > 0"));
        }
        Ok(())
    }

    /// Build the trace for `seed`. Replayed traces ignore the seed.
    pub fn materialize(&self, seed: u64) -> Result<Trace> {
        match (&self.preset, &self.trace) {
            (Some(p), _) => generate_scenario(*p, seed, self.duration_s),
            (None, Some(path)) => load_trace(path),
            (None, None) => Err(Error::config("scenario", "no preset or trace given")),
        }
    }

    pub fn label(&self) -> String {
        match (&self.preset, &self.trace) {
            (Some(p), _) => p.to_string(),
            (None, Some(path)) => path.display().to_string(),
            (None, None) => "none".into(),
        }
    }
}

fn default_corpus_seed() -> u64 {
    7
}

fn default_experts() -> usize {
    3
}

fn default_bins() -> usize {
    8
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    #[default]
    Oracle,
    /// True length plus Laplace noise with the given mean absolute error.
    NoisyOracle { target_l1: f64 },
    /// One conditional-median table over the whole training corpus.
    Single {
        #[serde(default)]
        corpus: CorpusSpec,
        #[serde(default = "default_corpus_seed")]
        corpus_seed: u64,
        #[serde(default = "default_bins")]
        input_bins: usize,
    },
    Mope {
        #[serde(default = "default_experts")]
        experts: usize,
        #[serde(default)]
        corpus: CorpusSpec,
        #[serde(default = "default_corpus_seed")]
        corpus_seed: u64,
        /// Load a trained model instead of training one.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_path: Option<PathBuf>,
    },
}

impl PredictorSpec {
    pub fn mope() -> Self {
        PredictorSpec::Mope {
            experts: 3,
            corpus: CorpusSpec::default(),
            corpus_seed: default_corpus_seed(),
            model_path: None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            PredictorSpec::Oracle => "oracle".into(),
            PredictorSpec::NoisyOracle { target_l1 } => format!("noisy_oracle(l1={target_l1})"),
            PredictorSpec::Single { .. } => "single".into(),
            PredictorSpec::Mope { experts, .. } => format!("mope({experts})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PredictorSpec::Oracle => Ok(()),
            PredictorSpec::NoisyOracle { target_l1 } => {
                if target_l1.is_finite() && *target_l1 >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::config("target_l1", "must be >= 0"))
                }
            }
            PredictorSpec::Single { input_bins, .. } => {
                if *input_bins == 0 {
                    return Err(Error::config("input_bins", "must be > 0"));
                }
                Ok(())
            }
            PredictorSpec::Mope { experts, .. } => {
                if ![1, 3, 5].contains(experts) {
                    return Err(Error::config("experts", "must be 1, 3 or 5"));
                }
                Ok(())
            }
        }
    }

    /// Train or load whatever the predictor needs; independent of the run seed.
    pub fn prepare(&self) -> Result<PreparedPredictor> {
        Ok(match self {
            PredictorSpec::Oracle => PreparedPredictor::Ready(Predictor::Oracle),
            PredictorSpec::NoisyOracle { target_l1 } => PreparedPredictor::Noisy(*target_l1),
            PredictorSpec::Single { corpus, corpus_seed, input_bins } => {
                let c = generate_corpus(corpus, *corpus_seed)?;
                PreparedPredictor::Ready(Predictor::train_single(&c.requests, *input_bins)?)
            }
            PredictorSpec::Mope { experts, corpus, corpus_seed, model_path } => {
                let model = match model_path {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                        MopeModel::from_json(&text)?
                    }
                    None => {
                        let c = generate_corpus(corpus, *corpus_seed)?;
                        train_mope(&c.requests, &MopeTraining::with_experts(*experts))?
                    }
                };
                PreparedPredictor::Ready(Predictor::mope(model))
            }
        })
    }
}

/// A predictor ready to be instantiated per seed.
#[derive(Debug, Clone)]
pub enum PreparedPredictor {
    Ready(Predictor),
    /// Noise streams are keyed by the run seed.
    Noisy(f64),
}

impl PreparedPredictor {
    pub fn for_seed(&self, seed: u64) -> Predictor {
        match self {
            PreparedPredictor::Ready(p) => p.clone(),
            PreparedPredictor::Noisy(l1) => Predictor::noisy(*l1, seed),
        }
    }
}

/// One row of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub label: String,
    pub policy: PolicySpec,
    #[serde(default)]
    pub predictor: PredictorSpec,
}

/// The scheduler x predictor rows of the standard fairness ablation.
pub fn default_grid() -> Vec<GridCell> {
    let vtc_pred = PolicySpec::Vtc(VtcParams { charge: VtcCharge::Predicted, ..VtcParams::default() });
    let eq = PolicySpec::Equinox(EquinoxParams::default());
    vec![
        GridCell { label: "FCFS".into(), policy: PolicySpec::Fcfs, predictor: PredictorSpec::Oracle },
        GridCell { label: "VTC".into(), policy: PolicySpec::Vtc(VtcParams::default()), predictor: PredictorSpec::Oracle },
        GridCell { label: "VTC + MoPE".into(), policy: vtc_pred, predictor: PredictorSpec::mope() },
        GridCell { label: "Equinox + MoPE".into(), policy: eq.clone(), predictor: PredictorSpec::mope() },
        GridCell { label: "Equinox + Oracle".into(), policy: eq, predictor: PredictorSpec::Oracle },
    ]
}

pub fn default_alphas() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub perf: PerfParams,
    #[serde(default)]
    pub engine: EngineOptions,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Rows for `ablation`; defaults to the standard five.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridCell>>,
    /// Values for `sweep-alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(scenario: ScenarioSpec) -> Self {
        RunConfig {
            scenario,
            policy: PolicySpec::default(),
            predictor: PredictorSpec::default(),
            perf: PerfParams::default(),
            engine: EngineOptions::default(),
            output_dir: default_output_dir(),
            seeds: default_seeds(),
            grid: None,
            alphas: None,
        }
    }

    /// Parse and validate. Every failure is a configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.policy.validate()?;
        self.predictor.validate()?;
        self.perf.validate()?;
        self.engine.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::config("grid", "must not be empty"));
            }
            for c in grid {
                c.policy.validate()?;
                c.predictor.validate()?;
            }
        }
        if let Some(alphas) = &self.alphas {
            if alphas.is_empty() {
                return Err(Error::config("alphas", "must not be empty"));
            }
            if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(Error::config("alpha", format!("must lie in [0, 1], got {a}")));
            }
        }
        Ok(())
    }

    pub fn engine_config(&self, policy: &PolicySpec) -> EngineConfig {
        EngineConfig::new(self.perf.clone(), policy.clone(), self.engine.clone())
    }
}

//! Deterministic simulator for fair scheduling of multi-tenant LLM serving.
//!
//! The crate models a single inference engine with continuous batching and
//! compares three admission policies: first-come-first-served, the virtual
//! token counter (VTC), and Equinox, which ranks clients by a holistic score
//! blending a latency-aware user counter with a resource-efficiency counter.
//! Output lengths come from pluggable predictors, including a mixture of
//! length-specialised experts.

pub mod config;
pub mod engine;
pub mod experiment;
pub mod error;
pub mod gpu_model;
pub mod metrics;
pub mod predictor;
pub mod scheduler;
pub mod workload;

pub use engine::{run, EngineConfig, EventLog, SimOutput};
pub use error::{Error, Result};
pub use gpu_model::{GpuProfile, PerfParams};
pub use metrics::{jain_index, SimReport};
pub use predictor::Predictor;
pub use scheduler::{EquinoxParams, PolicySpec, VtcParams};
pub use workload::{Request, ScenarioName, Trace};

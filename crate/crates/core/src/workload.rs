//! Requests, clients and arrival streams.
//!
//! Synthetic scenarios are pure functions of `(preset, seed, duration)`. Each
//! client draws from its own ChaCha stream derived from the client id, so
//! adding a client never perturbs the arrivals of the others.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Header of the trace CSV format.
pub const TRACE_CSV_HEADER: [&str; 5] = [
    "client_id",
    "arrival_time_s",
    "input_tokens",
    "output_tokens",
    "category_tag",
];

/// One inference request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub client_id: String,
    /// Seconds since the start of the trace.
    pub arrival_time: f64,
    pub input_tokens: u32,
    /// Ground-truth output length. Only the oracle predictors may look at it.
    pub true_output_tokens: u32,
    /// Surrogate for prompt keywords, consumed by the router.
    pub category_tag: Option<String>,
}

impl Request {
    /// Weighted token cost `in + output_weight * out`.
    pub fn weighted_tokens(&self, output_weight: f64, output_tokens: u32) -> f64 {
        self.input_tokens as f64 + output_weight * output_tokens as f64
    }
}

/// A segment of a piecewise-constant arrival schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub start_s: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Deterministic arrivals every `1/rate` seconds.
    Constant { rate: f64 },
    /// Exponential inter-arrival times with mean `1/rate`.
    Poisson { rate: f64 },
    /// Deterministic arrivals whose rate changes at each segment start.
    Piecewise { segments: Vec<RateSegment> },
    /// Arrivals come from a replayed file.
    Replay,
}

impl ArrivalProcess {
    /// Configured rate at time `t`, `None` for replayed traces.
    pub fn rate_at(&self, t: f64) -> Option<f64> {
        match self {
            ArrivalProcess::Constant { rate } | ArrivalProcess::Poisson { rate } => Some(*rate),
            ArrivalProcess::Piecewise { segments } => segments
                .iter()
                .take_while(|s| s.start_s <= t)
                .last()
                .map(|s| s.rate),
            ArrivalProcess::Replay => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |r: f64| !(r.is_finite() && r > 0.0);
        match self {
            ArrivalProcess::Constant { rate } | ArrivalProcess::Poisson { rate } if bad(*rate) => {
                Err(Error::config("rate", format!("must be > 0, got {rate}")))
            }
            ArrivalProcess::Piecewise { segments } => {
                if segments.is_empty() {
                    return Err(Error::config("segments", "must not be empty"));
                }
                for w in segments.windows(2) {
                    if w[1].start_s <= w[0].start_s {
                        return Err(Error::config("segments", "start times must increase"));
                    }
                }
                match segments.iter().find(|s| bad(s.rate)) {
                    Some(s) => Err(Error::config("rate", format!("must be > 0, got {}", s.rate))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    fn arrival_times(&self, duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            ArrivalProcess::Constant { rate } => {
                let mut k = 1u64;
                loop {
                    let t = k as f64 / rate;
                    if t >= duration {
                        break;
                    }
                    out.push(t);
                    k += 1;
                }
            }
            ArrivalProcess::Poisson { rate } => {
                let exp = Exp::new(*rate).expect("validated rate");
                let mut t = 0.0;
                loop {
                    t += exp.sample(rng);
                    if t >= duration {
                        break;
                    }
                    out.push(t);
                }
            }
            ArrivalProcess::Piecewise { segments } => {
                for (i, seg) in segments.iter().enumerate() {
                    let end = segments
                        .get(i + 1)
                        .map_or(duration, |n| n.start_s.min(duration));
                    let mut k = 1u64;
                    loop {
                        let t = seg.start_s + k as f64 / seg.rate;
                        if t >= end {
                            break;
                        }
                        out.push(t);
                        k += 1;
                    }
                }
            }
            ArrivalProcess::Replay => {}
        }
        out
    }
}

/// Distribution over positive token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDist {
    Fixed { value: u32 },
    Uniform { min: u32, max: u32 },
    /// Log-normal around `median`, truncated to `[1, max]`.
    LogNormal { median: f64, sigma: f64, max: u32 },
    /// Support of a replayed trace; sampling picks uniformly.
    Empirical { values: Vec<u32> },
}

impl LengthDist {
    pub fn fixed(value: u32) -> Self {
        LengthDist::Fixed { value }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match self {
            LengthDist::Fixed { value } => *value >= 1,
            LengthDist::Uniform { min, max } => *min >= 1 && min <= max,
            LengthDist::LogNormal { median, sigma, max } => {
                *median >= 1.0 && *sigma >= 0.0 && *max >= 1
            }
            LengthDist::Empirical { values } => {
                !values.is_empty() && values.iter().all(|&v| v >= 1)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(field, "length distribution must have positive support"))
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            LengthDist::Fixed { value } => *value,
            LengthDist::Uniform { min, max } => rng.random_range(*min..=*max),
            LengthDist::LogNormal { median, sigma, max } => {
                let z: f64 = StandardNormal.sample(rng);
                lognormal_len(*median, *sigma, z, *max)
            }
            LengthDist::Empirical { values } => values[rng.random_range(0..values.len())],
        }
    }

    /// Whether `v` lies in the support.
    pub fn contains(&self, v: u32) -> bool {
        match self {
            LengthDist::Fixed { value } => v == *value,
            LengthDist::Uniform { min, max } => (*min..=*max).contains(&v),
            LengthDist::LogNormal { max, .. } => (1..=*max).contains(&v),
            LengthDist::Empirical { values } => values.contains(&v),
        }
    }
}

fn lognormal_len(median: f64, sigma: f64, z: f64, max: u32) -> u32 {
    let v = (median.ln() + sigma * z).exp().round();
    (v as u32).clamp(1, max)
}

/// Static description of a tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub client_id: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub arrival: ArrivalProcess,
    pub input_len: LengthDist,
    pub output_len: LengthDist,
}

fn default_weight() -> f64 {
    1.0
}

impl ClientSpec {
    pub fn new(
        client_id: impl Into<String>,
        arrival: ArrivalProcess,
        input: u32,
        output: u32,
    ) -> Self {
        ClientSpec {
            client_id: client_id.into(),
            weight: 1.0,
            arrival,
            input_len: LengthDist::fixed(input),
            output_len: LengthDist::fixed(output),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::config(
                "weight",
                format!("client {} weight must be > 0", self.client_id),
            ));
        }
        self.arrival.validate()?;
        self.input_len.validate("input_len")?;
        self.output_len.validate("output_len")
    }
}

/// How synthetic requests get a `category_tag`.
///
/// The tag is the bucket of the true output length; with probability `noise`
/// it is swapped for a uniformly chosen different bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagConfig {
    pub bounds: Vec<u32>,
    pub noise: f64,
}

impl Default for TagConfig {
    fn default() -> Self {
        TagConfig {
            bounds: vec![53, 210],
            noise: 0.2,
        }
    }
}

impl TagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("tags.bounds", "must be strictly increasing"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::config("tags.noise", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn tag(&self, output_tokens: u32, rng: &mut ChaCha8Rng) -> String {
        let n = self.bounds.len() + 1;
        let mut bucket = bucket_of(&self.bounds, output_tokens);
        if n > 1 && rng.random::<f64>() < self.noise {
            let shift = rng.random_range(1..n);
            bucket = (bucket + shift) % n;
        }
        bucket_label(bucket, n)
    }
}

/// Index of the bucket holding `value`; bucket `i` covers `(bounds[i-1], bounds[i]]`.
pub fn bucket_of(bounds: &[u32], value: u32) -> usize {
    bounds.partition_point(|&b| b < value)
}

/// Human label for bucket `i` of `n`.
pub fn bucket_label(i: usize, n: usize) -> String {
    match (n, i) {
        (3, 0) => "short".into(),
        (3, 1) => "medium".into(),
        (3, 2) => "long".into(),
        _ => format!("bucket{i}"),
    }
}

/// Time-ordered list of requests plus the clients that issued them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub requests: Vec<Request>,
    pub clients: Vec<ClientSpec>,
    pub duration: f64,
    /// Non-fatal notes raised while building the trace (e.g. auto-sorting).
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn client(&self, id: &str) -> Option<&ClientSpec> {
        self.clients.iter().find(|c| c.client_id == id)
    }

    pub fn weights(&self) -> HashMap<String, f64> {
        self.clients
            .iter()
            .map(|c| (c.client_id.clone(), c.weight))
            .collect()
    }

    /// Serialize as trace CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let map = |e: csv::Error| Error::Consistency(format!("csv write: {e}"));
        wr.write_record(TRACE_CSV_HEADER).map_err(map)?;
        for r in &self.requests {
            wr.write_record([
                r.client_id.as_str(),
                &r.arrival_time.to_string(),
                &r.input_tokens.to_string(),
                &r.true_output_tokens.to_string(),
                r.category_tag.as_deref().unwrap_or(""),
            ])
            .map_err(map)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// SHA-256 of the CSV serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Balanced,
    Poisson,
    Overload,
    DynamicIncrease,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Balanced,
        ScenarioName::Poisson,
        ScenarioName::Overload,
        ScenarioName::DynamicIncrease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Balanced => "balanced",
            ScenarioName::Poisson => "poisson",
            ScenarioName::Overload => "overload",
            ScenarioName::DynamicIncrease => "dynamic_increase",
        }
    }

    /// Client specs for this preset over `duration` seconds.
    pub fn clients(self, duration: f64) -> Vec<ClientSpec> {
        use ArrivalProcess::*;
        match self {
            ScenarioName::Balanced => vec![
                ClientSpec::new("client1", Constant { rate: 2.0 }, 100, 400),
                ClientSpec::new("client2", Constant { rate: 1.0 }, 100, 900),
            ],
            ScenarioName::Poisson => vec![
                ClientSpec::new("client1", Poisson { rate: 16.0 }, 512, 32),
                ClientSpec::new("client2", Poisson { rate: 3.0 }, 32, 512),
            ],
            ScenarioName::Overload => vec![
                ClientSpec::new("client1", Constant { rate: 20.0 }, 20, 180),
                ClientSpec::new("client2", Constant { rate: 2.0 }, 200, 1800),
            ],
            ScenarioName::DynamicIncrease => vec![
                ClientSpec::new("client1", Constant { rate: 1.0 }, 100, 400),
                ClientSpec::new(
                    "client2",
                    Piecewise {
                        segments: vec![
                            RateSegment { start_s: 0.0, rate: 1.0 },
                            RateSegment { start_s: duration / 2.0, rate: 4.0 },
                        ],
                    },
                    100,
                    400,
                ),
            ],
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config("preset", format!("unknown scenario preset `{s}`")))
    }
}

/// Seeded stream for one client: same seed, disjoint ChaCha stream per client id.
pub fn client_rng(seed: u64, client_id: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(client_id.as_bytes());
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng
}

/// Generate a trace from arbitrary client specs.
pub fn generate(
    clients: Vec<ClientSpec>,
    seed: u64,
    duration: f64,
    tags: &TagConfig,
) -> Result<Trace> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::config("duration_s", "must be > 0"));
    }
    tags.validate()?;
    let mut seen = std::collections::HashSet::new();
    for c in &clients {
        c.validate()?;
        if !seen.insert(c.client_id.as_str()) {
            return Err(Error::config(
                "clients",
                format!("duplicate client id {}", c.client_id),
            ));
        }
    }

    // (arrival, client index, per-client sequence) keeps the merge stable.
    let mut staged: Vec<(f64, usize, Request)> = Vec::new();
    for (ci, spec) in clients.iter().enumerate() {
        let mut rng = client_rng(seed, &spec.client_id);
        let times = spec.arrival.arrival_times(duration, &mut rng);
        for t in times {
            let input = spec.input_len.sample(&mut rng);
            let output = spec.output_len.sample(&mut rng);
            let tag = tags.tag(output, &mut rng);
            staged.push((
                t,
                ci,
                Request {
                    id: 0,
                    client_id: spec.client_id.clone(),
                    arrival_time: t,
                    input_tokens: input,
                    true_output_tokens: output,
                    category_tag: Some(tag),
                },
            ));
        }
    }
    staged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let requests = staged
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, mut r))| {
            r.id = i as u64;
            r
        })
        .collect();
    Ok(Trace {
        requests,
        clients,
        duration,
        warnings: Vec::new(),
    })
}

/// Generate one of the built-in scenarios with default tagging.
pub fn generate_scenario(preset: ScenarioName, seed: u64, duration: f64) -> Result<Trace> {
    generate(preset.clients(duration), seed, duration, &TagConfig::default())
}

/// Client 1 at a constant 1 req/s; client 2 at 1 req/s, quadrupling at `duration / 2`.
pub fn generate_dynamic_increase(seed: u64, duration: f64) -> Result<Trace> {
    generate_scenario(ScenarioName::DynamicIncrease, seed, duration)
}

/// Parameters of the LMSYS-like synthetic corpus used to train predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub size: usize,
    pub output_median: f64,
    pub output_sigma: f64,
    pub output_max: u32,
    pub input_median: f64,
    pub input_sigma: f64,
    pub input_max: u32,
    /// Correlation of the latent normals driving input and output length.
    pub length_correlation: f64,
    pub tags: TagConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            size: 10_000,
            output_median: 105.0,
            output_sigma: 1.6,
            output_max: 4096,
            input_median: 80.0,
            input_sigma: 1.2,
            input_max: 4096,
            length_correlation: 0.3,
            tags: TagConfig::default(),
        }
    }
}

/// Single-client corpus of independent requests with hidden true lengths.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Trace> {
    spec.tags.validate()?;
    if !(-1.0..=1.0).contains(&spec.length_correlation) {
        return Err(Error::config("length_correlation", "must lie in [-1, 1]"));
    }
    let mut rng = client_rng(seed, "corpus");
    let rho = spec.length_correlation;
    let requests = (0..spec.size)
        .map(|i| {
            let zo: f64 = StandardNormal.sample(&mut rng);
            let zn: f64 = StandardNormal.sample(&mut rng);
            let zi = rho * zo + (1.0 - rho * rho).sqrt() * zn;
            let out = lognormal_len(spec.output_median, spec.output_sigma, zo, spec.output_max);
            let inp = lognormal_len(spec.input_median, spec.input_sigma, zi, spec.input_max);
            let tag = spec.tags.tag(out, &mut rng);
            Request {
                id: i as u64,
                client_id: "corpus".into(),
                arrival_time: 0.0,
                input_tokens: inp,
                true_output_tokens: out,
                category_tag: Some(tag),
            }
        })
        .collect();
    Ok(Trace {
        requests,
        clients: vec![ClientSpec {
            client_id: "corpus".into(),
            weight: 1.0,
            arrival: ArrivalProcess::Replay,
            input_len: LengthDist::LogNormal {
                median: spec.input_median,
                sigma: spec.input_sigma,
                max: spec.input_max,
            },
            output_len: LengthDist::LogNormal {
                median: spec.output_median,
                sigma: spec.output_sigma,
                max: spec.output_max,
            },
        }],
        duration: 0.0,
        warnings: Vec::new(),
    })
}

/// Load a trace CSV from disk.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(file, path)
}

/// Parse trace CSV from any reader; `origin` is used in error messages.
pub fn read_trace<R: Read>(reader: R, origin: &Path) -> Result<Trace> {
    let row_err = |line: u64, message: String| Error::TraceRow {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| row_err(1, format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Ok(Trace {
            requests: Vec::new(),
            clients: Vec::new(),
            duration: 0.0,
            warnings: Vec::new(),
        });
    }
    if headers.iter().ne(TRACE_CSV_HEADER) {
        return Err(row_err(
            1,
            format!("expected header `{}`", TRACE_CSV_HEADER.join(",")),
        ));
    }

    let mut requests = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        // header is line 1
        let fallback_line = idx as u64 + 2;
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(fallback_line, |p| p.line());
            row_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(fallback_line, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let client_id = field(0).to_string();
        if client_id.is_empty() {
            return Err(row_err(line, "empty client_id".into()));
        }
        let arrival: f64 = field(1)
            .parse()
            .map_err(|_| row_err(line, format!("bad arrival_time_s `{}`", field(1))))?;
        if !(arrival.is_finite() && arrival >= 0.0) {
            return Err(row_err(line, "arrival_time_s must be a non-negative number".into()));
        }
        let tokens = |i: usize, name: &str| -> Result<u32> {
            let v: i64 = field(i)
                .parse()
                .map_err(|_| row_err(line, format!("bad {name} `{}`", field(i))))?;
            if v <= 0 || v > u32::MAX as i64 {
                return Err(row_err(line, format!("{name} must be positive, got {v}")));
            }
            Ok(v as u32)
        };
        let input_tokens = tokens(2, "input_tokens")?;
        let true_output_tokens = tokens(3, "output_tokens")?;
        let tag = field(4);
        requests.push(Request {
            id: 0,
            client_id,
            arrival_time: arrival,
            input_tokens,
            true_output_tokens,
            category_tag: (!tag.is_empty()).then(|| tag.to_string()),
        });
    }

    let mut warnings = Vec::new();
    if requests
        .windows(2)
        .any(|w| w[1].arrival_time < w[0].arrival_time)
    {
        requests.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
        warnings.push("arrivals were not sorted; trace was re-sorted by arrival time".into());
        log::warn!("{}: unsorted arrivals, re-sorted", origin.display());
    }
    for (i, r) in requests.iter_mut().enumerate() {
        r.id = i as u64;
    }

    let mut order: Vec<String> = Vec::new();
    let mut ins: HashMap<String, Vec<u32>> = HashMap::new();
    let mut outs: HashMap<String, Vec<u32>> = HashMap::new();
    for r in &requests {
        if !ins.contains_key(&r.client_id) {
            order.push(r.client_id.clone());
        }
        ins.entry(r.client_id.clone()).or_default().push(r.input_tokens);
        outs.entry(r.client_id.clone())
            .or_default()
            .push(r.true_output_tokens);
    }
    let clients = order
        .into_iter()
        .map(|id| {
            let mut i = ins.remove(&id).unwrap_or_default();
            let mut o = outs.remove(&id).unwrap_or_default();
            i.sort_unstable();
            i.dedup();
            o.sort_unstable();
            o.dedup();
            ClientSpec {
                client_id: id,
                weight: 1.0,
                arrival: ArrivalProcess::Replay,
                input_len: LengthDist::Empirical { values: i },
                output_len: LengthDist::Empirical { values: o },
            }
        })
        .collect();
    let duration = requests.last().map_or(0.0, |r| r.arrival_time);
    Ok(Trace {
        requests,
        clients,
        duration,
        warnings,
    })
}

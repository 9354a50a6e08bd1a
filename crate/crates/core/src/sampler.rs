//! Reproducible testbeds of few-shot tasks.
//!
//! Two class-sampling strategies share one pipeline:
//!
//! * `uniform` — every class subset of size `n` is equally likely;
//! * `semantic` — classes are drawn sequentially from a potential built on
//!   the pseudo-distance matrix. The weight vector starts as the occurrence
//!   penalty `exp(−β·occ_i/max(occ))` and is multiplied after every draw by
//!   the drawn class's potential row `exp(−α·D(c,·))`, so semantically close
//!   classes end up in the same task while the penalty keeps the testbed
//!   balanced. Already-selected classes are masked to probability zero.
//!
//! Weight accumulation happens in log space; draws exp-normalize by the
//! running maximum, so products of many `exp(−β·…)` factors cannot underflow
//! in the common path. If every unmasked weight still collapses (sum below
//! [`UNDERFLOW_FLOOR`]), the draw falls back to uniform over the unmasked
//! classes and the event is recorded in the testbed's provenance warnings.
//!
//! Candidate class sets are oversampled, deduplicated (two tasks are
//! duplicates iff their class sets are equal), truncated to the first
//! `num_tasks` unique sets in draw order, and only then filled with
//! instances: per class, `shots + queries_per_class` distinct instances are
//! drawn uniformly without replacement, the first `shots` forming the
//! support set and the rest the query set.
//!
//! Randomness comes from a seeded ChaCha12 generator with published stream
//! splitting: class draws use stream [`CLASS_STREAM`]; instances for the
//! task with id `t` use stream [`INSTANCE_STREAM_BASE`]` + t`, so instance
//! filling is order-independent and parallelizable without breaking
//! reproducibility.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semantics::{self, DistanceMatrix};
use crate::taxonomy::TaxonomyGraph;

pub const DEFAULT_ALPHA: f64 = 0.383;
pub const DEFAULT_BETA: f64 = 100.0;
pub const DEFAULT_QUERIES_PER_CLASS: usize = 10;
pub const DEFAULT_NUM_TASKS: usize = 5000;
pub const DEFAULT_OVERSAMPLE_FACTOR: usize = 2;

/// RNG stream carrying all class-set draws.
pub const CLASS_STREAM: u64 = 0;
/// RNG stream `INSTANCE_STREAM_BASE + task_id` carries the instance draws of
/// one task.
pub const INSTANCE_STREAM_BASE: u64 = 1;

/// Fallback threshold for degenerate weight vectors (see module docs).
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("class `{class}` has {have} instances, needs at least {need}")]
    InsufficientInstances {
        class: String,
        have: usize,
        need: usize,
    },
    #[error("only {achieved} unique tasks exist in the candidate stream, {requested} requested")]
    NotEnoughUniqueTasks { achieved: usize, requested: usize },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("instance catalog: {0}")]
    InvalidCatalog(String),
    #[error("testbed file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Semantic,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Uniform => write!(f, "uniform"),
            Strategy::Semantic => write!(f, "semantic"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SamplerConfig {
    pub ways: usize,
    pub shots: usize,
    pub queries_per_class: usize,
    pub num_tasks: usize,
    /// Candidate class sets drawn before dedup = `oversample_factor * num_tasks`.
    pub oversample_factor: usize,
    pub alpha: f64,
    pub beta: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 1,
            queries_per_class: DEFAULT_QUERIES_PER_CLASS,
            num_tasks: DEFAULT_NUM_TASKS,
            oversample_factor: DEFAULT_OVERSAMPLE_FACTOR,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            strategy: Strategy::Semantic,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(
        &self,
        dm: &DistanceMatrix,
        catalog: &InstanceCatalog,
    ) -> Result<(), SamplerError> {
        if self.ways < 2 {
            return Err(SamplerError::InvalidConfig("ways must be >= 2".into()));
        }
        if self.shots < 1 || self.queries_per_class < 1 {
            return Err(SamplerError::InvalidConfig(
                "shots and queries_per_class must be >= 1".into(),
            ));
        }
        if self.num_tasks < 1 || self.oversample_factor < 1 {
            return Err(SamplerError::InvalidConfig(
                "num_tasks and oversample_factor must be >= 1".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SamplerError::InvalidConfig("alpha must be finite and >= 0".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(SamplerError::InvalidConfig("beta must be finite and >= 0".into()));
        }
        if self.ways > dm.len() {
            return Err(SamplerError::InvalidConfig(format!(
                "ways = {} exceeds the {} available classes",
                self.ways,
                dm.len()
            )));
        }
        let need = self.shots + self.queries_per_class;
        for class in dm.class_ids() {
            let have = catalog
                .instances(class)
                .ok_or_else(|| SamplerError::UnknownClass(class.clone()))?
                .len();
            if have < need {
                return Err(SamplerError::InsufficientInstances {
                    class: class.clone(),
                    have,
                    need,
                });
            }
        }
        Ok(())
    }
}

/// Instance ids per class, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceCatalog {
    by_class: BTreeMap<String, Vec<String>>,
}

impl InstanceCatalog {
    pub fn from_map(by_class: BTreeMap<String, Vec<String>>) -> Result<Self, SamplerError> {
        let mut seen = HashSet::new();
        for (class, instances) in &by_class {
            if instances.is_empty() {
                return Err(SamplerError::InvalidCatalog(format!(
                    "class `{class}` has no instances"
                )));
            }
            for id in instances {
                if !seen.insert(id.as_str()) {
                    return Err(SamplerError::InvalidCatalog(format!(
                        "instance id `{id}` appears more than once"
                    )));
                }
            }
        }
        Ok(Self { by_class })
    }

    /// Parse from `instance_id,class_id` CSV (header required).
    pub fn from_csv(source: &str) -> Result<Self, SamplerError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(source.as_bytes());
        {
            let headers = r
                .headers()
                .map_err(|e| SamplerError::InvalidCatalog(e.to_string()))?;
            if headers.len() != 2 || &headers[0] != "instance_id" || &headers[1] != "class_id" {
                return Err(SamplerError::InvalidCatalog(
                    "header must be `instance_id,class_id`".into(),
                ));
            }
        }
        let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| SamplerError::InvalidCatalog(e.to_string()))?;
            if rec.len() != 2 {
                return Err(SamplerError::InvalidCatalog(format!(
                    "expected 2 cells, got {}",
                    rec.len()
                )));
            }
            by_class
                .entry(rec[1].to_string())
                .or_default()
                .push(rec[0].to_string());
        }
        Self::from_map(by_class)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["instance_id", "class_id"]).expect("in-memory write");
        for (class, instances) in &self.by_class {
            for id in instances {
                w.write_record([id, class]).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    pub fn classes(&self) -> impl Iterator<Item = &String> {
        self.by_class.keys()
    }

    pub fn instances(&self, class: &str) -> Option<&[String]> {
        self.by_class.get(class).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }
}

/// One few-shot task. Support and query instance sets are disjoint; every
/// instance belongs to its stated class; `class_ids` are distinct and listed
/// in draw order (the task's class order for classifiers).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskSpec {
    pub task_id: u64,
    #[serde(rename = "classes")]
    pub class_ids: Vec<String>,
    pub support: BTreeMap<String, Vec<String>>,
    pub query: BTreeMap<String, Vec<String>>,
    pub coarsity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub strategy: Strategy,
    pub seed: u64,
    pub taxonomy_sha256: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Testbed {
    pub config: SamplerConfig,
    pub provenance: Provenance,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Serialize, Deserialize)]
struct TestbedHeader {
    config: SamplerConfig,
    taxonomy_sha256: String,
    strategy: Strategy,
    seed: u64,
    warnings: Vec<String>,
}

impl Testbed {
    /// JSON Lines: a header object, then one task per line.
    pub fn to_jsonl(&self) -> String {
        let header = TestbedHeader {
            config: self.config.clone(),
            taxonomy_sha256: self.provenance.taxonomy_sha256.clone(),
            strategy: self.provenance.strategy,
            seed: self.provenance.seed,
            warnings: self.provenance.warnings.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for task in &self.tasks {
            out.push_str(&serde_json::to_string(task).expect("task serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(source: &str) -> Result<Self, SamplerError> {
        let mut lines = source.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| SamplerError::Parse("empty testbed file".into()))?;
        let header: TestbedHeader = serde_json::from_str(header_line)
            .map_err(|e| SamplerError::Parse(format!("header: {e}")))?;
        let mut tasks = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let task: TaskSpec = serde_json::from_str(line)
                .map_err(|e| SamplerError::Parse(format!("task line {}: {e}", i + 2)))?;
            tasks.push(task);
        }
        Ok(Self {
            config: header.config,
            provenance: Provenance {
                strategy: header.strategy,
                seed: header.seed,
                taxonomy_sha256: header.taxonomy_sha256,
                warnings: header.warnings,
            },
            tasks,
        })
    }
}

/// Base potential matrix `exp(−α·D)` (unit diagonal, symmetric, entries in
/// (0, 1]).
pub fn build_potential(dm: &DistanceMatrix, alpha: f64) -> Vec<f64> {
    dm.values().iter().map(|d| (-alpha * d).exp()).collect()
}

/// Per-class penalty `exp(−β·occ_i / max(occ))`, entries in (0, 1].
pub fn occurrence_penalty(occ: &[u64], beta: f64) -> Vec<f64> {
    let max = occ.iter().copied().max().unwrap_or(1).max(1) as f64;
    occ.iter()
        .map(|&o| (-beta * o as f64 / max).exp())
        .collect()
}

/// Running state of the class sampler: log potential, occurrence counters,
/// and the class-draw RNG stream.
pub struct SamplerState {
    n_classes: usize,
    /// Row-major `−α·D`; `None` for the uniform strategy.
    log_potential: Option<Vec<f64>>,
    beta: f64,
    occ: Vec<u64>,
    class_rng: ChaCha12Rng,
    strategy: Strategy,
    fallback_draws: u64,
}

impl SamplerState {
    pub fn new(dm: &DistanceMatrix, config: &SamplerConfig) -> Self {
        let mut class_rng = ChaCha12Rng::seed_from_u64(config.seed);
        class_rng.set_stream(CLASS_STREAM);
        let log_potential = match config.strategy {
            Strategy::Semantic => Some(
                dm.values()
                    .iter()
                    .map(|d| -config.alpha * d)
                    .collect::<Vec<f64>>(),
            ),
            Strategy::Uniform => None,
        };
        Self {
            n_classes: dm.len(),
            log_potential,
            beta: config.beta,
            occ: vec![1; dm.len()],
            class_rng,
            strategy: config.strategy,
            fallback_draws: 0,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Occurrence counters (initialized to all ones; `+1` per class per
    /// sampled candidate task).
    pub fn occurrences(&self) -> &[u64] {
        &self.occ
    }

    /// Number of draws that hit the degenerate-weight uniform fallback.
    pub fn fallback_draws(&self) -> u64 {
        self.fallback_draws
    }

    /// The base potential matrix `exp(−α·D)` (all ones for uniform strategy).
    pub fn base_potential(&self) -> Vec<f64> {
        match &self.log_potential {
            Some(lp) => lp.iter().map(|l| l.exp()).collect(),
            None => vec![1.0; self.n_classes * self.n_classes],
        }
    }

    /// Draw one class set of size `n` (indices in canonical class order,
    /// listed in draw order) and update the occurrence counters.
    pub fn sample_class_set(&mut self, n: usize) -> Vec<usize> {
        assert!(n <= self.n_classes, "ways exceeds class count");
        let mut masked = vec![false; self.n_classes];
        let mut log_w = match self.strategy {
            Strategy::Semantic => {
                let max_occ = self.occ.iter().copied().max().unwrap_or(1) as f64;
                self.occ
                    .iter()
                    .map(|&o| -self.beta * o as f64 / max_occ)
                    .collect::<Vec<f64>>()
            }
            Strategy::Uniform => vec![0.0; self.n_classes],
        };
        let mut selected = Vec::with_capacity(n);
        for _ in 0..n {
            let (idx, fell_back) = draw_log_weighted(&mut self.class_rng, &log_w, &masked);
            if fell_back {
                self.fallback_draws += 1;
            }
            masked[idx] = true;
            if let Some(lp) = &self.log_potential {
                let row = &lp[idx * self.n_classes..(idx + 1) * self.n_classes];
                for (w, r) in log_w.iter_mut().zip(row) {
                    *w += r;
                }
            }
            selected.push(idx);
        }
        for &i in &selected {
            self.occ[i] += 1;
        }
        selected
    }
}

/// Weighted draw from log weights with a mask, exp-normalizing by the running
/// maximum. Returns `(index, fallback_used)`; the fallback draws uniformly
/// over the unmasked classes when every unmasked weight has collapsed.
fn draw_log_weighted(rng: &mut ChaCha12Rng, log_w: &[f64], masked: &[bool]) -> (usize, bool) {
    let mut max = f64::NEG_INFINITY;
    for (i, &lw) in log_w.iter().enumerate() {
        if !masked[i] && lw > max {
            max = lw;
        }
    }
    if max.is_finite() {
        let mut total = 0.0;
        let weights: Vec<f64> = log_w
            .iter()
            .enumerate()
            .map(|(i, &lw)| {
                if masked[i] {
                    0.0
                } else {
                    let w = (lw - max).exp();
                    total += w;
                    w
                }
            })
            .collect();
        if total >= UNDERFLOW_FLOOR && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut last_unmasked = None;
            for (i, &w) in weights.iter().enumerate() {
                if masked[i] {
                    continue;
                }
                acc += w;
                last_unmasked = Some(i);
                if target < acc {
                    return (i, false);
                }
            }
            // Rounding can leave target == acc; the last unmasked class wins.
            return (last_unmasked.expect("at least one unmasked class"), false);
        }
    }
    let unmasked: Vec<usize> = (0..log_w.len()).filter(|&i| !masked[i]).collect();
    let pick = unmasked[rng.random_range(0..unmasked.len())];
    (pick, true)
}

/// Per-task instance RNG: stream `INSTANCE_STREAM_BASE + task_id` of the
/// seeded generator.
fn instance_rng(seed: u64, task_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(INSTANCE_STREAM_BASE + task_id);
    rng
}

fn fill_instances(
    class_ids: Vec<String>,
    catalog: &InstanceCatalog,
    dm: &DistanceMatrix,
    config: &SamplerConfig,
    task_id: u64,
) -> Result<TaskSpec, SamplerError> {
    let mut rng = instance_rng(config.seed, task_id);
    let need = config.shots + config.queries_per_class;
    let mut support = BTreeMap::new();
    let mut query = BTreeMap::new();
    for class in &class_ids {
        let pool = catalog
            .instances(class)
            .ok_or_else(|| SamplerError::UnknownClass(class.clone()))?;
        if pool.len() < need {
            return Err(SamplerError::InsufficientInstances {
                class: class.clone(),
                have: pool.len(),
                need,
            });
        }
        // Partial Fisher-Yates over indices: first `need` entries are a
        // uniform draw without replacement, in draw order.
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        for i in 0..need {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let picked: Vec<String> = idx[..need].iter().map(|&i| pool[i].clone()).collect();
        support.insert(class.clone(), picked[..config.shots].to_vec());
        query.insert(class.clone(), picked[config.shots..].to_vec());
    }
    let coarsity = semantics::coarsity(dm, &class_ids)
        .map_err(|e| SamplerError::InvalidConfig(e.to_string()))?
        .value();
    Ok(TaskSpec {
        task_id,
        class_ids,
        support,
        query,
        coarsity,
    })
}

/// Draw one task: a class set from the sampler state, then instances from the
/// task's own RNG stream.
pub fn sample_task(
    state: &mut SamplerState,
    catalog: &InstanceCatalog,
    dm: &DistanceMatrix,
    config: &SamplerConfig,
    task_id: u64,
) -> Result<TaskSpec, SamplerError> {
    let class_ids: Vec<String> = state
        .sample_class_set(config.ways)
        .into_iter()
        .map(|i| dm.class_ids()[i].clone())
        .collect();
    fill_instances(class_ids, catalog, dm, config, task_id)
}

/// Generate a full testbed: oversample candidate class sets, dedup (first
/// occurrence wins), truncate to `num_tasks`, fill instances, and stamp
/// provenance.
pub fn generate_testbed(
    g: &TaxonomyGraph,
    dm: &DistanceMatrix,
    catalog: &InstanceCatalog,
    config: &SamplerConfig,
) -> Result<Testbed, SamplerError> {
    config.validate(dm, catalog)?;
    if g.leaf_class_ids() != dm.class_ids() {
        return Err(SamplerError::InvalidConfig(
            "distance matrix class order does not match the taxonomy's leaf order".into(),
        ));
    }

    let mut state = SamplerState::new(dm, config);
    let candidates = config.oversample_factor * config.num_tasks;
    let mut kept: Vec<Vec<usize>> = Vec::with_capacity(config.num_tasks);
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(candidates);
    for _ in 0..candidates {
        let class_set = state.sample_class_set(config.ways);
        let mut key = class_set.clone();
        key.sort_unstable();
        if seen.insert(key) && kept.len() < config.num_tasks {
            kept.push(class_set);
        }
    }
    if kept.len() < config.num_tasks {
        return Err(SamplerError::NotEnoughUniqueTasks {
            achieved: seen.len(),
            requested: config.num_tasks,
        });
    }

    let mut tasks = Vec::with_capacity(kept.len());
    for (t, class_set) in kept.into_iter().enumerate() {
        let class_ids: Vec<String> = class_set
            .into_iter()
            .map(|i| dm.class_ids()[i].clone())
            .collect();
        tasks.push(fill_instances(class_ids, catalog, dm, config, t as u64)?);
    }

    let mut warnings = Vec::new();
    if state.fallback_draws() > 0 {
        warnings.push(format!(
            "degenerate potential: uniform fallback used for {} draws",
            state.fallback_draws()
        ));
    }
    Ok(Testbed {
        config: config.clone(),
        provenance: Provenance {
            strategy: config.strategy,
            seed: config.seed,
            taxonomy_sha256: g.content_sha256(),
            warnings,
        },
        tasks,
    })
}

//! Command-line surface: `distances`, `sample`, `stats`, `eval`, plus a
//! `fixtures` helper that materializes the synthetic desk-scale inputs.
//!
//! Every command is deterministic given identical inputs and flags, and every
//! output file gets a manifest written beside it (`<name>.manifest.json`)
//! with input content hashes, the resolved configuration, and any warnings.
//!
//! Exit codes: 0 on success, 2 for validation errors (unreadable or malformed
//! inputs, bad flags, unknown ids), 3 for resource or degenerate-data errors
//! (not enough unique tasks, classes with too few instances).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::evalkit::{
    self, load_embeddings, ClassifierSpec, EvalError, BDCSPN_DEFAULT_SHIFT_WEIGHT,
    BDCSPN_DEFAULT_TEMPERATURE, DEFAULT_ROLLING_WINDOW, FINETUNE_DEFAULT_LEARNING_RATE,
    FINETUNE_DEFAULT_STEPS,
};
use crate::manifest::RunManifest;
use crate::sampler::{
    self, InstanceCatalog, SamplerConfig, SamplerError, Strategy, Testbed, DEFAULT_ALPHA,
    DEFAULT_BETA, DEFAULT_NUM_TASKS, DEFAULT_OVERSAMPLE_FACTOR, DEFAULT_QUERIES_PER_CLASS,
};
use crate::semantics::{self, DistanceMatrix, SemanticsError};
use crate::synthetic;
use crate::taxonomy::{load_taxonomy, TaxonomyError, TaxonomyGraph};

/// Environment variable overriding the worker thread count used for distance
/// matrices and evaluation.
pub const THREADS_ENV: &str = "SEMTASK_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2: malformed input, unknown id, invalid flag combination.
    Validation(String),
    /// Exit code 3: degenerate data or resource exhaustion.
    Resource(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Resource(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Resource(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SemanticsError> for CliError {
    fn from(e: SemanticsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::NotEnoughUniqueTasks { .. }
            | SamplerError::InsufficientInstances { .. } => CliError::Resource(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "semtask",
    version,
    about = "Semantic task sampling and evaluation for few-shot classification testbeds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Export the pairwise pseudo-distance matrix of a taxonomy as CSV.
    Distances {
        /// Taxonomy JSON file.
        #[arg(long)]
        taxonomy: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a testbed of few-shot tasks as JSON Lines.
    Sample(SampleArgs),
    /// Coarsity histogram, per-class participation, and quartile boundaries
    /// of a testbed.
    Stats {
        /// Testbed JSONL file.
        #[arg(long)]
        testbed: PathBuf,
        /// Distance matrix CSV (from `distances`).
        #[arg(long)]
        distances: PathBuf,
        /// Histogram bin width in coarsity units.
        #[arg(long, default_value_t = 2.0)]
        bin_width: f64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a few-shot classifier on a testbed.
    Eval(EvalArgs),
    /// Write a named synthetic fixture (taxonomy, catalog, embeddings) into a
    /// directory, for trying the pipeline without real dataset exports.
    Fixtures {
        /// Which fixture: the 160-class or the 240-class taxonomy.
        #[arg(long, value_enum, default_value_t = FixtureName::Tiered)]
        name: FixtureName,
        /// Instances per class in the catalog.
        #[arg(long, default_value_t = 25)]
        per_class: usize,
        /// Embedding dimension.
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Embedding generator seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
pub struct SampleArgs {
    /// Taxonomy JSON file.
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Instance catalog CSV (`instance_id,class_id`).
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Semantic)]
    pub strategy: StrategyArg,
    /// Semantic concentration (potential = exp(-alpha * distance)).
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Occurrence-penalty strength.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    /// Classes per task.
    #[arg(long, default_value_t = 5)]
    pub ways: usize,
    /// Support instances per class.
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    /// Query instances per class.
    #[arg(long, default_value_t = DEFAULT_QUERIES_PER_CLASS)]
    pub queries: usize,
    /// Tasks kept after deduplication.
    #[arg(long, default_value_t = DEFAULT_NUM_TASKS)]
    pub tasks: usize,
    /// Candidate multiplier before deduplication.
    #[arg(long, default_value_t = DEFAULT_OVERSAMPLE_FACTOR)]
    pub oversample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Testbed JSONL file.
    #[arg(long)]
    pub testbed: PathBuf,
    /// Embeddings file (EMB1 binary or CSV, sniffed by magic).
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Finetune: gradient steps.
    #[arg(long, default_value_t = FINETUNE_DEFAULT_STEPS)]
    pub steps: u32,
    /// Finetune: learning rate.
    #[arg(long, default_value_t = FINETUNE_DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    /// BD-CSPN: softmax temperature over negative squared distances.
    #[arg(long, default_value_t = BDCSPN_DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// BD-CSPN: blend weight between the support prototype and the
    /// query-weighted mean.
    #[arg(long, default_value_t = BDCSPN_DEFAULT_SHIFT_WEIGHT)]
    pub shift: f64,
    /// Rolling-average window (tasks).
    #[arg(long, default_value_t = DEFAULT_ROLLING_WINDOW)]
    pub window: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Uniform,
    Semantic,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Uniform => Strategy::Uniform,
            StrategyArg::Semantic => Strategy::Semantic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Protonet,
    Finetune,
    Bdcspn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    Tiered,
    Fungi,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_thread_pool();
    match cli.command {
        Command::Distances { taxonomy, out } => cmd_distances(&taxonomy, &out),
        Command::Sample(args) => cmd_sample(&args),
        Command::Stats {
            testbed,
            distances,
            bin_width,
            out,
        } => cmd_stats(&testbed, &distances, bin_width, &out),
        Command::Eval(args) => cmd_eval(&args),
        Command::Fixtures {
            name,
            per_class,
            dim,
            seed,
            out,
        } => cmd_fixtures(name, per_class, dim, seed, &out),
    }
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                // Ignore the error if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn read_input_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Resource(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::Resource(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(manifest: &RunManifest, beside: &Path) -> Result<(), CliError> {
    manifest
        .write_beside(beside)
        .map(|_| ())
        .map_err(|e| CliError::Resource(format!("cannot write manifest: {e}")))
}

fn load_graph(path: &Path, manifest: &mut RunManifest) -> Result<TaxonomyGraph, CliError> {
    let text = read_input_text(path)?;
    manifest.record_input(path, text.as_bytes());
    load_taxonomy(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn cmd_distances(taxonomy: &Path, out: &Path) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(serde_json::json!({
        "command": "distances",
        "taxonomy": taxonomy.display().to_string(),
    }));
    let g = load_graph(taxonomy, &mut manifest)?;
    let dm = semantics::distance_matrix(&g);
    write_output(out, dm.to_csv().as_bytes())?;
    manifest.record_output(out);
    write_manifest(&manifest, out)
}

fn cmd_sample(args: &SampleArgs) -> Result<(), CliError> {
    let config = SamplerConfig {
        ways: args.ways,
        shots: args.shots,
        queries_per_class: args.queries,
        num_tasks: args.tasks,
        oversample_factor: args.oversample,
        alpha: args.alpha,
        beta: args.beta,
        strategy: args.strategy.into(),
        seed: args.seed,
    };
    let mut manifest = RunManifest::new(serde_json::json!({
        "command": "sample",
        "config": config,
    }));
    manifest.seed = Some(args.seed);
    let g = load_graph(&args.taxonomy, &mut manifest)?;
    let catalog_text = read_input_text(&args.catalog)?;
    manifest.record_input(&args.catalog, catalog_text.as_bytes());
    let catalog = InstanceCatalog::from_csv(&catalog_text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.catalog.display())))?;
    let dm = semantics::distance_matrix(&g);
    let testbed = sampler::generate_testbed(&g, &dm, &catalog, &config)?;
    write_output(&args.out, testbed.to_jsonl().as_bytes())?;
    manifest.record_output(&args.out);
    manifest.warnings = testbed.provenance.warnings.clone();
    write_manifest(&manifest, &args.out)
}

fn cmd_stats(
    testbed_path: &Path,
    distances_path: &Path,
    bin_width: f64,
    out_dir: &Path,
) -> Result<(), CliError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(CliError::Validation("bin width must be positive".into()));
    }
    let mut manifest = RunManifest::new(serde_json::json!({
        "command": "stats",
        "bin_width": bin_width,
    }));
    let testbed_text = read_input_text(testbed_path)?;
    manifest.record_input(testbed_path, testbed_text.as_bytes());
    let testbed = Testbed::from_jsonl(&testbed_text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", testbed_path.display())))?;
    let dm_text = read_input_text(distances_path)?;
    manifest.record_input(distances_path, dm_text.as_bytes());
    let dm = DistanceMatrix::from_csv(&dm_text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", distances_path.display())))?;

    for task in &testbed.tasks {
        for class in &task.class_ids {
            if dm.index_of(class).is_none() {
                return Err(CliError::Validation(format!(
                    "task {} references class `{class}` absent from the distance matrix",
                    task.task_id
                )));
            }
        }
    }

    let histogram = coarsity_histogram(&testbed, bin_width);
    let participation = participation_csv(&testbed, &dm);
    let quartiles = quartile_boundaries_csv(&testbed);

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Resource(format!("cannot create {}: {e}", out_dir.display())))?;
    let hist_path = out_dir.join("coarsity_histogram.csv");
    let part_path = out_dir.join("participation.csv");
    let quart_path = out_dir.join("quartiles.csv");
    write_output(&hist_path, histogram.as_bytes())?;
    write_output(&part_path, participation.as_bytes())?;
    write_output(&quart_path, quartiles.as_bytes())?;
    manifest.record_output(&hist_path);
    manifest.record_output(&part_path);
    manifest.record_output(&quart_path);
    write_manifest(&manifest, &out_dir.join("stats"))
}

fn coarsity_histogram(testbed: &Testbed, bin_width: f64) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    if testbed.tasks.is_empty() {
        return out;
    }
    let min = testbed
        .tasks
        .iter()
        .map(|t| t.coarsity)
        .fold(f64::INFINITY, f64::min);
    let max = testbed
        .tasks
        .iter()
        .map(|t| t.coarsity)
        .fold(f64::NEG_INFINITY, f64::max);
    let first = (min / bin_width).floor() as i64;
    let last = (max / bin_width).floor() as i64;
    let mut counts = vec![0usize; (last - first + 1) as usize];
    for task in &testbed.tasks {
        let bin = (task.coarsity / bin_width).floor() as i64 - first;
        counts[bin as usize] += 1;
    }
    for (i, count) in counts.iter().enumerate() {
        let lo = (first + i as i64) as f64 * bin_width;
        let hi = (first + i as i64 + 1) as f64 * bin_width;
        out.push_str(&format!("{lo},{hi},{count}\n"));
    }
    out
}

fn participation_csv(testbed: &Testbed, dm: &DistanceMatrix) -> String {
    let mut counts = vec![0usize; dm.len()];
    for task in &testbed.tasks {
        for class in &task.class_ids {
            counts[dm.index_of(class).expect("validated above")] += 1;
        }
    }
    let total = testbed.tasks.len() as f64;
    let mut out = String::from("class_id,task_count,proportion\n");
    for (i, class) in dm.class_ids().iter().enumerate() {
        out.push_str(&format!("{class},{},{}\n", counts[i], counts[i] as f64 / total));
    }
    out
}

fn quartile_boundaries_csv(testbed: &Testbed) -> String {
    let mut order: Vec<usize> = (0..testbed.tasks.len()).collect();
    order.sort_by(|&a, &b| {
        testbed.tasks[a]
            .coarsity
            .total_cmp(&testbed.tasks[b].coarsity)
            .then(testbed.tasks[a].task_id.cmp(&testbed.tasks[b].task_id))
    });
    let n = order.len();
    let base = n / 4;
    let extra = n % 4;
    let mut out = String::from("quartile,task_count,min_coarsity,max_coarsity,mean_coarsity\n");
    let mut start = 0usize;
    for q in 0..4 {
        let size = base + usize::from(q < extra);
        let bucket = &order[start..start + size];
        start += size;
        if bucket.is_empty() {
            out.push_str(&format!("{},0,,,\n", q + 1));
            continue;
        }
        let cs: Vec<f64> = bucket.iter().map(|&i| testbed.tasks[i].coarsity).collect();
        let mean = cs.iter().sum::<f64>() / cs.len() as f64;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            q + 1,
            bucket.len(),
            cs.first().unwrap(),
            cs.last().unwrap(),
            mean
        ));
    }
    out
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let spec = match args.method {
        MethodArg::Protonet => ClassifierSpec::Protonet,
        MethodArg::Finetune => ClassifierSpec::Finetune {
            steps: args.steps,
            learning_rate: args.lr,
        },
        MethodArg::Bdcspn => ClassifierSpec::Bdcspn {
            temperature: args.temperature,
            shift_weight: args.shift,
        },
    };
    spec.validate()?;
    let mut manifest = RunManifest::new(serde_json::json!({
        "command": "eval",
        "classifier": spec,
        "window": args.window,
    }));
    let testbed_text = read_input_text(&args.testbed)?;
    manifest.record_input(&args.testbed, testbed_text.as_bytes());
    let testbed = Testbed::from_jsonl(&testbed_text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.testbed.display())))?;
    let emb_bytes = read_input(&args.embeddings)?;
    manifest.record_input(&args.embeddings, &emb_bytes);
    let store = load_embeddings(&emb_bytes)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.embeddings.display())))?;

    let report = evalkit::evaluate_testbed(&store, &testbed, &spec)?
        .with_rolling(args.window)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Resource(format!("cannot create {}: {e}", args.out.display())))?;
    let report_path = args.out.join("report.json");
    let per_task_path = args.out.join("per_task.csv");
    let rolling_path = args.out.join("rolling.csv");
    write_output(&report_path, report.to_json().as_bytes())?;
    write_output(&per_task_path, report.per_task_csv().as_bytes())?;
    write_output(&rolling_path, report.rolling_csv().as_bytes())?;
    manifest.record_output(&report_path);
    manifest.record_output(&per_task_path);
    manifest.record_output(&rolling_path);
    write_manifest(&manifest, &args.out.join("eval"))
}

fn cmd_fixtures(
    name: FixtureName,
    per_class: usize,
    dim: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    if per_class == 0 || dim == 0 {
        return Err(CliError::Validation("per_class and dim must be >= 1".into()));
    }
    let g = match name {
        FixtureName::Tiered => synthetic::tiered_like_fixture(),
        FixtureName::Fungi => synthetic::fungi_like_fixture(),
    };
    let catalog = synthetic::uniform_catalog(&g, per_class);
    let params = synthetic::EmbeddingParams {
        dim,
        seed,
        ..Default::default()
    };
    let store = synthetic::hierarchy_embeddings(&g, &catalog, &params);

    let mut manifest = RunManifest::new(serde_json::json!({
        "command": "fixtures",
        "name": format!("{name:?}").to_lowercase(),
        "per_class": per_class,
        "dim": dim,
        "seed": seed,
        "walk_std": params.walk_std,
        "noise_std": params.noise_std,
    }));
    manifest.seed = Some(seed);

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Resource(format!("cannot create {}: {e}", out_dir.display())))?;
    let tax_path = out_dir.join("taxonomy.json");
    let cat_path = out_dir.join("catalog.csv");
    let emb_path = out_dir.join("embeddings.emb1");
    write_output(&tax_path, g.to_json().as_bytes())?;
    write_output(&cat_path, catalog.to_csv().as_bytes())?;
    write_output(&emb_path, &store.to_emb1())?;
    manifest.record_output(&tax_path);
    manifest.record_output(&cat_path);
    manifest.record_output(&emb_path);
    write_manifest(&manifest, &out_dir.join("fixtures"))
}

//! Experiment grids over numeral system, data scale and operation: cached
//! canonical datasets, resumable per-seed runs, and cross-system trend and
//! train-versus-eval reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{classify_dataset, mul_edge_stats, pattern_report, write_cases, LabelCounts, MulEdgeStats};
use crate::datagen::{
    generate_eval, generate_extrapolation, generate_train, read_dataset, subsample_per_cell, write_dataset, Dataset,
    DatagenError, ExtrapolationLayout,
};
use crate::fsio::atomic_write;
use crate::grid::{CellMatrix, GridError, LengthGrid};
use crate::metrics::{format_cell, score_dataset_keyed, CellKey, MetricReport, MetricSummary, MetricsError};
use crate::model::{
    decode_batch, save_checkpoint, train_encoded, ModelConfig, ModelError, TrainConfig, TransformerParams,
};
use crate::numeral::{encode_prompt, encode_sample, token_length, NumeralSystem, Operation, TokenId, Vocabulary};

/// Bumped whenever run outputs change meaning, so stale caches miss.
const RUN_FORMAT: &str = "numbase-run-v1";
/// Leading operand and answer tokens compared in multiplication edge stats.
const EDGE_TOKENS: usize = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run {hash} seed {seed} ({system}, {op}, 2^{scale}): {source}")]
    Run {
        hash: String,
        seed: u64,
        system: String,
        op: Operation,
        scale: u32,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("records are not comparable: {0}")]
    Comparability(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unreadable {path}: {message}")]
    Parse { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    atomic_write(path, &bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Parse { path: path.display().to_string(), message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtrapolationSpec {
    pub layout: ExtrapolationLayout,
    pub samples_per_cell: usize,
}

/// One cell of an experiment grid, run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: NumeralSystem,
    pub op: Operation,
    /// Training set size is `2^train_scale`.
    pub train_scale: u32,
    pub grid: LengthGrid,
    pub eval_per_cell: usize,
    pub train_subsample_per_cell: usize,
    pub extrapolation: Option<ExtrapolationSpec>,
    pub model: ModelConfig,
    /// `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

/// Longest `prompt + answer + EOS` for operands of at most `la`, `lb` digits.
pub fn max_sequence_tokens(sys: NumeralSystem, op: Operation, la: usize, lb: usize) -> usize {
    let answer_digits = match op {
        Operation::Add => la.max(lb) + 1,
        Operation::Mul => la + lb,
    };
    sys.tokens_for_digits(la) + sys.tokens_for_digits(lb) + sys.tokens_for_digits(answer_digits) + 3
}

impl ExperimentConfig {
    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.system)
    }

    /// Model configuration with the vocabulary size filled in.
    pub fn resolved_model(&self) -> ModelConfig {
        if self.model.vocab_size == 0 {
            self.model.clone().with_vocab(&self.vocab())
        } else {
            self.model.clone()
        }
    }

    pub fn train_total(&self) -> usize {
        1usize << self.train_scale
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.grid.validate()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(1..=30).contains(&self.train_scale) {
            return bad(format!("train scale {} outside 1..=30", self.train_scale));
        }
        if self.eval_per_cell == 0 || self.train_subsample_per_cell == 0 {
            return bad("per-cell evaluation counts must be positive".into());
        }
        let model = self.resolved_model();
        model.validate()?;
        model.check_vocab(&self.vocab())?;
        self.train.validate()?;
        let mut longest = max_sequence_tokens(self.system, self.op, self.grid.la_max, self.grid.lb_max);
        if let Some(x) = &self.extrapolation {
            x.layout.validate()?;
            if x.samples_per_cell == 0 {
                return bad("extrapolation samples per cell must be positive".into());
            }
            let g = x.layout.bounding_grid();
            for (la, lb) in x.layout.cells() {
                longest = longest.max(max_sequence_tokens(self.system, self.op, la, lb));
            }
            if g.max_digits() <= self.grid.max_digits() {
                return bad("extrapolation lengths must exceed the training grid".into());
            }
        }
        if longest > model.context_length {
            return bad(format!("context length {} is shorter than the longest sequence {longest}", model.context_length));
        }
        Ok(())
    }

    /// Hex digest over every field that affects a run except the seed list.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            format: &'a str,
            system: u32,
            op: Operation,
            train_scale: u32,
            grid: LengthGrid,
            eval_per_cell: usize,
            train_subsample_per_cell: usize,
            extrapolation: Option<ExtrapolationSpec>,
            model: ModelConfig,
            train: TrainConfig,
        }
        let h = Hashed {
            format: RUN_FORMAT,
            system: self.system.base(),
            op: self.op,
            train_scale: self.train_scale,
            grid: self.grid,
            eval_per_cell: self.eval_per_cell,
            train_subsample_per_cell: self.train_subsample_per_cell,
            extrapolation: self.extrapolation,
            model: self.resolved_model(),
            train: TrainConfig { seed: 0, ..self.train.clone() },
        };
        let digest = Sha256::digest(serde_json::to_vec(&h).expect("config serializes"));
        hex::encode(&digest[..8])
    }

    /// Digest of the dataset-defining fields; systems share it.
    pub fn data_hash(&self, seed: u64) -> String {
        let key = serde_json::json!({
            "op": self.op,
            "grid": self.grid,
            "train_scale": self.train_scale,
            "eval_per_cell": self.eval_per_cell,
            "train_subsample_per_cell": self.train_subsample_per_cell,
            "extrapolation": self.extrapolation,
            "seed": seed,
        });
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("key serializes"));
        hex::encode(&digest[..8])
    }

    pub fn describe(&self) -> String {
        format!("base {} {} 2^{} on {}", self.system.base(), self.op, self.train_scale, self.grid.describe())
    }
}

/// Compact description of a grid of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub systems: Vec<u32>,
    pub ops: Vec<Operation>,
    pub scales: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Operand lengths `1..=max_digits` for both operands.
    pub max_digits: usize,
    pub eval_per_cell: usize,
    pub train_subsample_per_cell: usize,
    /// Per-cell size of the set one to five digits past `max_digits`;
    /// `null` skips extrapolation.
    pub extrapolation_per_cell: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            systems: vec![10, 100, 1000],
            ops: vec![Operation::Add],
            scales: (12..=16).collect(),
            seeds: vec![0, 1, 2],
            max_digits: 5,
            eval_per_cell: 1000,
            train_subsample_per_cell: 1000,
            extrapolation_per_cell: Some(100),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>, ExperimentError> {
        let grid = LengthGrid::square(self.max_digits)?;
        let mut out = Vec::new();
        for &op in &self.ops {
            for &scale in &self.scales {
                for &base in &self.systems {
                    let system = NumeralSystem::from_base(base).map_err(|e| ExperimentError::Config(e.to_string()))?;
                    let cfg = ExperimentConfig {
                        system,
                        op,
                        train_scale: scale,
                        grid,
                        eval_per_cell: self.eval_per_cell,
                        train_subsample_per_cell: self.train_subsample_per_cell,
                        extrapolation: self.extrapolation_per_cell.map(|n| ExtrapolationSpec {
                            layout: ExtrapolationLayout::beyond(self.max_digits),
                            samples_per_cell: n,
                        }),
                        model: ModelConfig { vocab_size: 0, ..self.model.clone() },
                        train: self.train.clone(),
                        seeds: self.seeds.clone(),
                    };
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

/// Canonical operand pairs for one seed, shared by every numeral system.
#[derive(Debug, Clone)]
pub struct RunData {
    pub eval: Dataset,
    pub train: Dataset,
    pub train_subsample: Dataset,
    pub extrapolation: Option<Dataset>,
}

/// Generates the datasets for `seed`, or reads them back from `cache_dir`.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64, cache_dir: &Path) -> Result<RunData, ExperimentError> {
    let dir = cache_dir.join(format!("{}-seed{seed}", cfg.data_hash(seed)));
    let path = |name: &str| dir.join(format!("{name}.jsonl"));
    let cached = |name: &str| -> Result<Option<Dataset>, ExperimentError> {
        let p = path(name);
        if p.exists() {
            Ok(Some(read_dataset(&p)?))
        } else {
            Ok(None)
        }
    };
    let eval = match cached("eval")? {
        Some(d) => d,
        None => {
            let d = generate_eval(cfg.op, cfg.eval_per_cell, cfg.grid, seed)?;
            write_dataset(&d, &path("eval"))?;
            d
        }
    };
    let train = match cached("train")? {
        Some(d) => d,
        None => {
            let d = generate_train(cfg.op, cfg.train_total(), cfg.grid, &eval, seed)?;
            write_dataset(&d, &path("train"))?;
            d
        }
    };
    let train_subsample = match cached("train_subsample")? {
        Some(d) => d,
        None => {
            let d = subsample_per_cell(&train, cfg.train_subsample_per_cell, seed);
            write_dataset(&d, &path("train_subsample"))?;
            d
        }
    };
    let extrapolation = match &cfg.extrapolation {
        None => None,
        Some(x) => Some(match cached("extrapolation")? {
            Some(d) => d,
            None => {
                let d = generate_extrapolation(cfg.op, x.samples_per_cell, x.layout, seed)?;
                write_dataset(&d, &path("extrapolation"))?;
                d
            }
        }),
    };
    Ok(RunData { eval, train, train_subsample, extrapolation })
}

/// Greedy answers for every sample of `ds`, scored into a report.
pub fn evaluate(
    params: &TransformerParams<f32>,
    ds: &Dataset,
    vocab: &Vocabulary,
    grid: LengthGrid,
    key: CellKey,
) -> Result<(MetricReport, Vec<Vec<TokenId>>), ExperimentError> {
    let prompts: Vec<Vec<TokenId>> = ds.samples.iter().map(|s| encode_prompt(&s.a, &s.b, s.op, vocab)).collect();
    let longest_prompt = prompts.iter().map(Vec::len).max().unwrap_or(0);
    let longest_answer = ds.samples.iter().map(|s| token_length(&s.answer, vocab.system)).max().unwrap_or(0);
    let room = params.config.context_length.saturating_sub(longest_prompt);
    // One token of slack past EOS lets overlong answers show up as errors.
    let max_new = (longest_answer + 2).min(room);
    let outputs = if prompts.is_empty() { Vec::new() } else { decode_batch(params, &prompts, max_new, vocab.eos())? };
    let report = score_dataset_keyed(&outputs, &ds.samples, grid, vocab, key)?;
    Ok((report, outputs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub system: NumeralSystem,
    pub op: Operation,
    pub train_scale: u32,
    pub grid: LengthGrid,
    pub data_hash: String,
    pub train_samples: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub eval: MetricSummary,
    pub train_subsample: MetricSummary,
    pub extrapolation: Option<MetricSummary>,
    pub patterns: Option<LabelCounts>,
    pub mul_edges: Option<MulEdgeStats>,
    /// Relative to the grid output directory.
    pub run_dir: String,
    pub checkpoint: String,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn metric_dir(&self, out_dir: &Path, split: &str) -> PathBuf {
        out_dir.join(&self.run_dir).join(split)
    }
}

pub fn run_dir_name(hash: &str, seed: u64) -> String {
    format!("runs/{hash}/seed-{seed}")
}

/// Trains and evaluates one `(config, seed)` unless a completed record
/// exists. Returns the record and whether training happened.
pub fn run_one(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<(RunRecord, bool), ExperimentError> {
    let hash = cfg.hash();
    let rel = run_dir_name(&hash, seed);
    let final_dir = out_dir.join(&rel);
    let record_path = final_dir.join("record.json");
    if record_path.exists() {
        return Ok((read_json(&record_path)?, false));
    }
    cfg.validate()?;
    let config_dir = out_dir.join("runs").join(&hash);
    write_json(&config_dir.join("config.json"), cfg)?;
    let work = config_dir.join(format!(".seed-{seed}.partial"));
    if work.exists() {
        fs::remove_dir_all(&work).map_err(io_err(&work))?;
    }
    fs::create_dir_all(&work).map_err(io_err(&work))?;

    let started = Instant::now();
    let data = prepare_data(cfg, seed, &out_dir.join("datasets"))?;
    let vocab = cfg.vocab();
    let wrap = |source: ModelError| ExperimentError::Run {
        hash: hash.clone(),
        seed,
        system: format!("base {}", cfg.system.base()),
        op: cfg.op,
        scale: cfg.train_scale,
        source,
    };
    let mut params = TransformerParams::<f32>::init(cfg.resolved_model(), seed).map_err(wrap)?;
    let encoded: Vec<_> = data.train.samples.iter().map(|s| encode_sample(&s.a, &s.b, s.op, &vocab)).collect();
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let outcome = train_encoded(&mut params, &encoded, vocab.pad(), &train_cfg, |_, _| {}).map_err(wrap)?;
    save_checkpoint(&params, Some(cfg.system), &work.join("model.ckpt")).map_err(wrap)?;
    let loss_path = work.join("loss.csv");
    atomic_write(&loss_path, outcome.loss_curve.to_csv().as_bytes()).map_err(io_err(&loss_path))?;

    let (eval, _) = evaluate(&params, &data.eval, &vocab, cfg.grid, CellKey::Ordered)?;
    eval.write(&work.join("eval"))?;
    let (sub, _) = evaluate(&params, &data.train_subsample, &vocab, cfg.grid, CellKey::Ordered)?;
    sub.write(&work.join("train_subsample"))?;

    let (mut extrapolation, mut patterns, mut mul_edges) = (None, None, None);
    if let (Some(spec), Some(ds)) = (&cfg.extrapolation, &data.extrapolation) {
        let folded = spec.layout.folded_grid();
        let (report, outputs) = evaluate(&params, ds, &vocab, folded, CellKey::LongShort)?;
        report.write(&work.join("extrapolation"))?;
        extrapolation = Some(report.summary.clone());
        match cfg.op {
            Operation::Add => {
                let max_tokens = cfg.system.tokens_for_digits(cfg.grid.max_digits());
                let cases = classify_dataset(&ds.samples, &outputs, &vocab, max_tokens);
                let labels: Vec<_> = cases.iter().map(|c| ((c.la.max(c.lb), c.la.min(c.lb)), c.label.tag)).collect();
                let rep = pattern_report(&labels, folded);
                write_json(&work.join("extrapolation").join("patterns.json"), &rep.to_json())?;
                let cases_path = work.join("extrapolation").join("cases.jsonl");
                write_cases(&cases, &cases_path).map_err(io_err(&cases_path))?;
                patterns = Some(rep.aggregate);
            }
            Operation::Mul => {
                let stats = mul_edge_stats(&ds.samples, &outputs, &vocab, EDGE_TOKENS);
                write_json(&work.join("extrapolation").join("mul_edges.json"), &stats)?;
                mul_edges = Some(stats);
            }
        }
    }

    let record = RunRecord {
        config_hash: hash.clone(),
        seed,
        system: cfg.system,
        op: cfg.op,
        train_scale: cfg.train_scale,
        grid: cfg.grid,
        data_hash: cfg.data_hash(seed),
        train_samples: data.train.len(),
        steps: outcome.steps,
        final_loss: outcome.loss_curve.last().unwrap_or(f64::NAN),
        eval: eval.summary,
        train_subsample: sub.summary,
        extrapolation,
        patterns,
        mul_edges,
        run_dir: rel.clone(),
        checkpoint: format!("{rel}/model.ckpt"),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&work.join("record.json"), &record)?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
    }
    fs::rename(&work, &final_dir).map_err(io_err(&final_dir))?;
    log::info!("{} seed {seed}: exact match {:.4}", cfg.describe(), record.eval.exact_match);
    Ok((record, true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    pub trained: usize,
    pub cached: usize,
}

/// Runs every `(config, seed)`, skipping completed ones, then writes
/// `comparison.csv` with one row per record.
pub fn run_grid(configs: &[ExperimentConfig], out_dir: &Path) -> Result<GridOutcome, ExperimentError> {
    for cfg in configs {
        cfg.validate()?;
    }
    let mut outcome = GridOutcome { records: Vec::new(), trained: 0, cached: 0 };
    for cfg in configs {
        for &seed in &cfg.seeds {
            let (record, trained) = run_one(cfg, seed, out_dir)?;
            if trained {
                outcome.trained += 1;
            } else {
                outcome.cached += 1;
            }
            outcome.records.push(record);
        }
    }
    let path = out_dir.join("comparison.csv");
    atomic_write(&path, records_csv(&outcome.records).as_bytes()).map_err(io_err(&path))?;
    Ok(outcome)
}

fn opt(v: Option<f64>) -> String {
    format_cell(&v)
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "config_hash,seed,base,op,train_scale,train_samples,steps,final_loss,eval_exact_match,eval_ned,eval_rel_err_log,eval_invalid_rate,train_exact_match,train_ned,extrap_exact_match,extrap_ned,extrap_rel_err_log\n",
    );
    for r in records {
        let x = r.extrapolation.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{},{},{}\n",
            r.config_hash,
            r.seed,
            r.system.base(),
            r.op,
            r.train_scale,
            r.train_samples,
            r.steps,
            r.final_loss,
            r.eval.exact_match,
            r.eval.ned,
            opt(r.eval.rel_err_log),
            r.eval.invalid_rate,
            r.train_subsample.exact_match,
            r.train_subsample.ned,
            opt(x.map(|s| s.exact_match)),
            opt(x.map(|s| s.ned)),
            opt(x.and_then(|s| s.rel_err_log)),
        ));
    }
    out
}

/// Every `record.json` under `out_dir/runs`, sorted by hash then seed.
pub fn load_records(out_dir: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let runs = out_dir.join("runs");
    let mut records = Vec::new();
    if !runs.exists() {
        return Ok(records);
    }
    let mut hashes: Vec<_> = fs::read_dir(&runs).map_err(io_err(&runs))?.collect::<Result<_, _>>().map_err(io_err(&runs))?;
    hashes.sort_by_key(|e| e.file_name());
    for h in hashes {
        let mut seeds: Vec<_> = fs::read_dir(h.path()).map_err(io_err(&h.path()))?.collect::<Result<_, _>>().map_err(io_err(&h.path()))?;
        seeds.sort_by_key(|e| e.file_name());
        for s in seeds {
            let p = s.path().join("record.json");
            if s.file_name().to_string_lossy().starts_with("seed-") && p.exists() {
                records.push(read_json(&p)?);
            }
        }
    }
    records.sort_by(|a, b| (&a.config_hash, a.seed).cmp(&(&b.config_hash, b.seed)));
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Better,
    Worse,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub op: Operation,
    pub train_scale: u32,
    pub base: u32,
    pub seeds: Vec<u64>,
    pub exact_match: f64,
    pub ned: f64,
    pub rel_err_log: Option<f64>,
    pub rel_err_conv: Option<f64>,
    pub invalid_rate: f64,
}

/// The smaller base against the larger one on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub op: Operation,
    pub train_scale: u32,
    pub metric: String,
    pub smaller_base: u32,
    pub larger_base: u32,
    /// Direction for the smaller base, on seed means.
    pub direction: Direction,
    pub mean_smaller: Option<f64>,
    pub mean_larger: Option<f64>,
    pub shared_seeds: usize,
    pub seed_wins: usize,
    pub seed_ties: usize,
    pub seed_losses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    pub pairs: Vec<PairComparison>,
    /// Base 10 strictly beats every other system on exact match and ned at
    /// every shared scale.
    pub base10_dominates: bool,
    pub notes: Vec<String>,
}

const TREND_METRICS: [&str; 3] = ["exact_match", "ned", "rel_err_log"];

fn metric_of(s: &MetricSummary, metric: &str) -> Option<f64> {
    match metric {
        "exact_match" => Some(s.exact_match),
        "ned" => Some(s.ned),
        "rel_err_log" => s.rel_err_log,
        _ => None,
    }
}

fn higher_is_better(metric: &str) -> bool {
    metric != "rel_err_log"
}

fn compare(a: f64, b: f64, metric: &str) -> Direction {
    if a == b {
        Direction::Tie
    } else if (a > b) == higher_is_better(metric) {
        Direction::Better
    } else {
        Direction::Worse
    }
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-scale seed means and pairwise system comparisons on eval reports.
pub fn trend_report(records: &[RunRecord]) -> Result<TrendReport, ExperimentError> {
    type Key = (Operation, u32);
    let mut groups: BTreeMap<(String, u32), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.op.to_string(), r.train_scale)).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    let mut notes = Vec::new();
    let mut comparable_groups = 0;
    let mut dominates = true;
    for group in groups.values() {
        let key: Key = (group[0].op, group[0].train_scale);
        if let Some(other) = group.iter().find(|r| r.grid != group[0].grid) {
            return Err(ExperimentError::Comparability(format!(
                "{} 2^{} mixes grids {} and {}",
                key.0,
                key.1,
                group[0].grid.describe(),
                other.grid.describe()
            )));
        }
        let mut by_base: BTreeMap<u32, BTreeMap<u64, &RunRecord>> = BTreeMap::new();
        for r in group {
            by_base.entry(r.system.base()).or_default().insert(r.seed, r);
        }
        for (&base, seeds) in &by_base {
            let runs: Vec<_> = seeds.values().collect();
            rows.push(TrendRow {
                op: key.0,
                train_scale: key.1,
                base,
                seeds: seeds.keys().copied().collect(),
                exact_match: mean(runs.iter().map(|r| Some(r.eval.exact_match))).unwrap_or(0.0),
                ned: mean(runs.iter().map(|r| Some(r.eval.ned))).unwrap_or(0.0),
                rel_err_log: mean(runs.iter().map(|r| r.eval.rel_err_log)),
                rel_err_conv: mean(runs.iter().map(|r| r.eval.rel_err_conv)),
                invalid_rate: mean(runs.iter().map(|r| Some(r.eval.invalid_rate))).unwrap_or(0.0),
            });
        }
        if by_base.len() < 2 {
            continue;
        }
        comparable_groups += 1;
        let bases: Vec<u32> = by_base.keys().copied().collect();
        for (i, &small) in bases.iter().enumerate() {
            for &large in &bases[i + 1..] {
                let (s, l) = (&by_base[&small], &by_base[&large]);
                let shared: BTreeSet<u64> = s.keys().filter(|k| l.contains_key(k)).copied().collect();
                for metric in TREND_METRICS {
                    let ms = mean(s.values().map(|r| metric_of(&r.eval, metric)));
                    let ml = mean(l.values().map(|r| metric_of(&r.eval, metric)));
                    let direction = match (ms, ml) {
                        (Some(a), Some(b)) => compare(a, b, metric),
                        _ => Direction::Tie,
                    };
                    let (mut w, mut t, mut lo) = (0, 0, 0);
                    for seed in &shared {
                        match (metric_of(&s[seed].eval, metric), metric_of(&l[seed].eval, metric)) {
                            (Some(a), Some(b)) => match compare(a, b, metric) {
                                Direction::Better => w += 1,
                                Direction::Tie => t += 1,
                                Direction::Worse => lo += 1,
                            },
                            _ => t += 1,
                        }
                    }
                    if small == 10 && metric != "rel_err_log" && direction != Direction::Better {
                        dominates = false;
                    }
                    if direction == Direction::Tie {
                        notes.push(format!("{} 2^{}: base {small} and base {large} tie on {metric}", key.0, key.1));
                    }
                    pairs.push(PairComparison {
                        op: key.0,
                        train_scale: key.1,
                        metric: metric.to_string(),
                        smaller_base: small,
                        larger_base: large,
                        direction,
                        mean_smaller: ms,
                        mean_larger: ml,
                        shared_seeds: shared.len(),
                        seed_wins: w,
                        seed_ties: t,
                        seed_losses: lo,
                    });
                }
            }
        }
        if !by_base.contains_key(&10) {
            dominates = false;
        }
    }
    if comparable_groups == 0 {
        return Err(ExperimentError::Comparability("no operation and scale has records from two systems".into()));
    }
    Ok(TrendReport { rows, pairs, base10_dominates: dominates, notes })
}

impl TrendReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("op,train_scale,base,seeds,exact_match,ned,rel_err_log,rel_err_conv,invalid_rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{},{},{:.6}\n",
                r.op,
                r.train_scale,
                r.base,
                r.seeds.len(),
                r.exact_match,
                r.ned,
                opt(r.rel_err_log),
                opt(r.rel_err_conv),
                r.invalid_rate
            ));
        }
        out
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from(
            "op,train_scale,metric,smaller_base,larger_base,direction,mean_smaller,mean_larger,shared_seeds,seed_wins,seed_ties,seed_losses\n",
        );
        for p in &self.pairs {
            let dir = serde_json::to_value(p.direction).expect("serializes");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                p.op,
                p.train_scale,
                p.metric,
                p.smaller_base,
                p.larger_base,
                dir.as_str().unwrap_or_default(),
                opt(p.mean_smaller),
                opt(p.mean_larger),
                p.shared_seeds,
                p.seed_wins,
                p.seed_ties,
                p.seed_losses
            ));
        }
        out
    }
}

/// Absolute train-subsample minus eval differences, per cell and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub exact_match: CellMatrix<Option<f64>>,
    pub ned: CellMatrix<Option<f64>>,
    pub rel_err_log: CellMatrix<Option<f64>>,
    pub aggregate_exact_match: f64,
    pub aggregate_ned: f64,
    pub aggregate_rel_err_log: Option<f64>,
}

fn cell_deltas(a: &CellMatrix<Option<f64>>, b: &CellMatrix<Option<f64>>) -> CellMatrix<Option<f64>> {
    CellMatrix {
        grid: a.grid,
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => Some((x - y).abs()),
                _ => None,
            })
            .collect(),
    }
}

pub fn overfit_between(train: &MetricReport, eval: &MetricReport) -> Result<OverfitReport, ExperimentError> {
    if train.grid != eval.grid {
        return Err(ExperimentError::Comparability(format!(
            "train grid {} differs from eval grid {}",
            train.grid.describe(),
            eval.grid.describe()
        )));
    }
    Ok(OverfitReport {
        exact_match: cell_deltas(&train.exact_match, &eval.exact_match),
        ned: cell_deltas(&train.ned, &eval.ned),
        rel_err_log: cell_deltas(&train.rel_err_log, &eval.rel_err_log),
        aggregate_exact_match: (train.summary.exact_match - eval.summary.exact_match).abs(),
        aggregate_ned: (train.summary.ned - eval.summary.ned).abs(),
        aggregate_rel_err_log: match (train.summary.rel_err_log, eval.summary.rel_err_log) {
            (Some(a), Some(b)) => Some((a - b).abs()),
            _ => None,
        },
    })
}

/// Reads a record's train-subsample and eval reports and compares them.
pub fn overfit_report(record: &RunRecord, out_dir: &Path) -> Result<OverfitReport, ExperimentError> {
    let train = MetricReport::read(&record.metric_dir(out_dir, "train_subsample"))?;
    let eval = MetricReport::read(&record.metric_dir(out_dir, "eval"))?;
    overfit_between(&train, &eval)
}

impl OverfitReport {
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        for (name, m) in [("exact_match", &self.exact_match), ("ned", &self.ned), ("rel_err_log", &self.rel_err_log)] {
            let p = dir.join(format!("delta_{name}.csv"));
            atomic_write(&p, m.to_csv(format_cell).as_bytes()).map_err(io_err(&p))?;
        }
        write_json(&dir.join("overfit.json"), self)
    }
}

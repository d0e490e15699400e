//! Balanced operand-pair generation over a length grid.
//!
//! Every cell `(la, lb)` owns the ordered pairs of positive integers with
//! exactly `la` and `lb` decimal digits. Pairs are addressed by a dense index
//! `i ∈ [0, capacity)`, so sampling without replacement reduces to sampling
//! distinct indices. The evaluation split is drawn first and the training
//! split samples only from what is left in each cell.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fsio::atomic_write;
use crate::grid::{CellMatrix, GridError, LengthGrid};
pub use crate::numeral::Operation;
use crate::numeral::{digit_length, to_groups, Number, NumeralSystem};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("requested {requested} training pairs but only {achievable} are available on this grid")]
    Infeasible { requested: usize, achievable: u128 },
    #[error("{0}")]
    InvalidRequest(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub a: Number,
    pub b: Number,
    pub op: Operation,
    pub answer: Number,
}

impl Sample {
    pub fn new(a: Number, b: Number, op: Operation) -> Self {
        let answer = op.apply(&a, &b);
        Self { a, b, op, answer }
    }

    pub fn cell(&self) -> (usize, usize) {
        (digit_length(&self.a), digit_length(&self.b))
    }

    pub fn is_consistent(&self) -> bool {
        self.op.apply(&self.a, &self.b) == self.answer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    Extrapolation,
    TrainSubsample,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Self::Eval => 1,
            Self::Train => 2,
            Self::Extrapolation => 3,
            Self::TrainSubsample => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub op: Operation,
    pub split: Split,
    /// Total for training sets, per-cell target otherwise.
    pub requested: usize,
    pub grid: LengthGrid,
    /// Realized counts, rows `la`, columns `lb`.
    pub per_cell: Vec<Vec<usize>>,
    pub max_operand_digits: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrapolation: Option<ExtrapolationLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub manifest: Manifest,
}

impl Dataset {
    fn from_cells(
        cells: Vec<((usize, usize), Vec<Sample>)>,
        grid: LengthGrid,
        seed: u64,
        op: Operation,
        split: Split,
        requested: usize,
    ) -> Self {
        let mut counts = CellMatrix::filled(grid, 0usize);
        let mut samples = Vec::new();
        for ((la, lb), cell) in cells {
            *counts.get_mut(la, lb).expect("cell in grid") = cell.len();
            samples.extend(cell);
        }
        let max_operand_digits = samples
            .iter()
            .map(|s| { let (la, lb) = s.cell(); la.max(lb) })
            .max()
            .unwrap_or(0);
        let manifest = Manifest {
            seed,
            op,
            split,
            requested,
            grid,
            per_cell: counts.rows().into_iter().map(<[usize]>::to_vec).collect(),
            max_operand_digits,
            total: samples.len(),
            extrapolation: None,
        };
        Self { samples, manifest }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn op(&self) -> Operation {
        self.manifest.op
    }

    pub fn grid(&self) -> LengthGrid {
        self.manifest.grid
    }

    pub fn cell_counts(&self) -> CellMatrix<usize> {
        let mut m = CellMatrix::filled(self.manifest.grid, 0usize);
        for s in &self.samples {
            let (la, lb) = s.cell();
            if let Some(c) = m.get_mut(la, lb) {
                *c += 1;
            }
        }
        m
    }

    pub fn duplicate_count(&self) -> usize {
        let mut seen = HashSet::with_capacity(self.samples.len());
        self.samples.iter().filter(|s| !seen.insert((&s.a, &s.b))).count()
    }

    /// Number of ordered pairs shared with `other`.
    pub fn overlap_count(&self, other: &Dataset) -> usize {
        let theirs: HashSet<(&Number, &Number)> = other.samples.iter().map(|s| (&s.a, &s.b)).collect();
        self.samples.iter().filter(|s| theirs.contains(&(&s.a, &s.b))).count()
    }

    /// Largest training length in tokens under `sys`.
    pub fn max_operand_tokens(&self, sys: NumeralSystem) -> usize {
        sys.tokens_for_digits(self.manifest.max_operand_digits)
    }

    /// SHA-256 over the canonical on-disk bytes (records then manifest).
    pub fn content_hash(&self) -> String {
        let (records, manifest) = self.to_bytes();
        let mut h = Sha256::new();
        h.update(&records);
        h.update(&manifest);
        hex::encode(h.finalize())
    }

    fn to_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let mut records = Vec::new();
        for s in &self.samples {
            serde_json::to_writer(&mut records, s).expect("sample serializes");
            records.push(b'\n');
        }
        let mut manifest = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        manifest.push(b'\n');
        (records, manifest)
    }
}

/// Ordered pairs of positive integers with exactly `la` and `lb` digits.
pub fn cell_capacity(la: usize, lb: usize) -> u128 {
    span(la) as u128 * span(lb) as u128
}

fn span(digits: usize) -> u64 {
    9 * 10u64.pow(digits as u32 - 1)
}

fn lowest(digits: usize) -> u64 {
    10u64.pow(digits as u32 - 1)
}

fn pair_at(la: usize, lb: usize, idx: u128) -> (Number, Number) {
    let nb = span(lb) as u128;
    let a = lowest(la) as u128 + idx / nb;
    let b = lowest(lb) as u128 + idx % nb;
    (Number::from(a), Number::from(b))
}

fn index_of(la: usize, lb: usize, a: &Number, b: &Number) -> Option<u128> {
    let a = a.to_u128()?;
    let b = b.to_u128()?;
    let nb = span(lb) as u128;
    Some((a - lowest(la) as u128) * nb + (b - lowest(lb) as u128))
}

fn stream_rng(seed: u64, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    rng
}

/// Draws `count` distinct indices in `[0, capacity)` avoiding `exclude`.
/// Enumerates the free indices when the request is dense, otherwise rejects.
fn sample_indices(rng: &mut ChaCha8Rng, capacity: u128, count: usize, exclude: &HashSet<u128>) -> Vec<u128> {
    if count == 0 {
        return Vec::new();
    }
    let occupied = (count + exclude.len()) as u128;
    assert!(occupied <= capacity, "cell over-subscribed");
    if occupied * 2 > capacity {
        let free: Vec<u128> = (0..capacity).filter(|i| !exclude.contains(i)).collect();
        index::sample(rng, free.len(), count).into_iter().map(|i| free[i]).collect()
    } else {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let i = rng.gen_range(0..capacity);
            if !exclude.contains(&i) && chosen.insert(i) {
                out.push(i);
            }
        }
        out
    }
}

fn cell_samples(la: usize, lb: usize, op: Operation, indices: &[u128]) -> Vec<Sample> {
    indices
        .iter()
        .map(|&i| {
            let (a, b) = pair_at(la, lb, i);
            Sample::new(a, b, op)
        })
        .collect()
}

/// Per cell: `min(per_cell, floor(capacity / 2))` distinct pairs.
pub fn generate_eval(op: Operation, per_cell: usize, grid: LengthGrid, seed: u64) -> Result<Dataset, DatagenError> {
    grid.validate()?;
    if per_cell == 0 {
        return Err(DatagenError::InvalidRequest("per-cell evaluation count must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, Split::Eval);
    let none = HashSet::new();
    let cells = grid
        .cells()
        .map(|(la, lb)| {
            let cap = cell_capacity(la, lb);
            let n = (per_cell as u128).min(cap / 2) as usize;
            let idx = sample_indices(&mut rng, cap, n, &none);
            ((la, lb), cell_samples(la, lb, op, &idx))
        })
        .collect();
    Ok(Dataset::from_cells(cells, grid, seed, op, Split::Eval, per_cell))
}

/// Per-cell training targets: an even quota, trimmed at random among the
/// largest cells when it overshoots and topped up round-robin when cells
/// saturate.
fn train_targets(total: usize, available: &[u128], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let cells = available.len();
    let quota = total.div_ceil(cells) as u128;
    let mut targets: Vec<usize> = available.iter().map(|&a| a.min(quota) as usize).collect();
    let mut sum: usize = targets.iter().sum();
    while sum > total {
        let max = *targets.iter().max().expect("non-empty grid");
        let largest: Vec<usize> = (0..cells).filter(|&i| targets[i] == max).collect();
        let pick = largest[rng.gen_range(0..largest.len())];
        targets[pick] -= 1;
        sum -= 1;
    }
    while sum < total {
        let mut progressed = false;
        for i in 0..cells {
            if sum == total {
                break;
            }
            if (targets[i] as u128) < available[i] {
                targets[i] += 1;
                sum += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    targets
}

/// Samples `total` training pairs disjoint from `eval_set`.
pub fn generate_train(
    op: Operation,
    total: usize,
    grid: LengthGrid,
    eval_set: &Dataset,
    seed: u64,
) -> Result<Dataset, DatagenError> {
    grid.validate()?;
    if total == 0 {
        return Err(DatagenError::InvalidRequest("training total must be at least 1".into()));
    }
    if eval_set.op() != op {
        return Err(DatagenError::InvalidRequest(format!(
            "evaluation set is for {}, training requested for {op}",
            eval_set.op()
        )));
    }
    let cells: Vec<(usize, usize)> = grid.cells().collect();
    let mut reserved: Vec<HashSet<u128>> = vec![HashSet::new(); cells.len()];
    for s in &eval_set.samples {
        let (la, lb) = s.cell();
        if let Some(ci) = grid.cell_index(la, lb) {
            reserved[ci].insert(index_of(la, lb, &s.a, &s.b).expect("grid operands fit u128"));
        }
    }
    let available: Vec<u128> = cells
        .iter()
        .zip(&reserved)
        .map(|(&(la, lb), r)| cell_capacity(la, lb) - r.len() as u128)
        .collect();
    let achievable: u128 = available.iter().sum();
    if total as u128 > achievable {
        return Err(DatagenError::Infeasible { requested: total, achievable });
    }
    let mut rng = stream_rng(seed, Split::Train);
    let targets = train_targets(total, &available, &mut rng);
    let out = cells
        .iter()
        .zip(targets)
        .zip(&reserved)
        .map(|((&(la, lb), n), r)| {
            let idx = sample_indices(&mut rng, cell_capacity(la, lb), n, r);
            ((la, lb), cell_samples(la, lb, op, &idx))
        })
        .collect();
    Ok(Dataset::from_cells(out, grid, seed, op, Split::Train, total))
}

/// Cells of a length-extrapolation set: one operand length in `long`, the
/// other in `short`, optionally in both operand orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtrapolationLayout {
    pub long: (usize, usize),
    pub short: (usize, usize),
    pub both_orders: bool,
}

impl ExtrapolationLayout {
    /// Lengths one to five past the trained maximum against one to five
    /// digits, both orders: 50 cells.
    pub fn beyond(max_trained_digits: usize) -> Self {
        Self { long: (max_trained_digits + 1, max_trained_digits + 5), short: (1, 5), both_orders: true }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        LengthGrid::new(self.long, self.short).map(|_| ())
    }

    /// Distinct `(la, lb)` cells, lexicographic.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for l in self.long.0..=self.long.1 {
            for s in self.short.0..=self.short.1 {
                cells.push((l, s));
                if self.both_orders {
                    cells.push((s, l));
                }
            }
        }
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    /// Smallest ordered grid containing every cell.
    pub fn bounding_grid(&self) -> LengthGrid {
        let lo = self.long.0.min(self.short.0);
        let hi = self.long.1.max(self.short.1);
        if self.both_orders {
            LengthGrid { la_min: lo, la_max: hi, lb_min: lo, lb_max: hi }
        } else {
            LengthGrid { la_min: self.long.0, la_max: self.long.1, lb_min: self.short.0, lb_max: self.short.1 }
        }
    }

    /// Rows are the longer operand's length, columns the shorter one's.
    pub fn folded_grid(&self) -> LengthGrid {
        LengthGrid { la_min: self.long.0, la_max: self.long.1, lb_min: self.short.0, lb_max: self.short.1 }
    }
}

impl Default for ExtrapolationLayout {
    fn default() -> Self {
        Self::beyond(10)
    }
}

/// `samples_per_cell` distinct pairs for every cell of `layout`.
pub fn generate_extrapolation(
    op: Operation,
    samples_per_cell: usize,
    layout: ExtrapolationLayout,
    seed: u64,
) -> Result<Dataset, DatagenError> {
    layout.validate()?;
    if samples_per_cell == 0 {
        return Err(DatagenError::InvalidRequest("samples per cell must be at least 1".into()));
    }
    let grid = layout.bounding_grid();
    let chosen: HashSet<(usize, usize)> = layout.cells().into_iter().collect();
    let mut rng = stream_rng(seed, Split::Extrapolation);
    let none = HashSet::new();
    let cells = grid
        .cells()
        .map(|(la, lb)| {
            if !chosen.contains(&(la, lb)) {
                return ((la, lb), Vec::new());
            }
            let cap = cell_capacity(la, lb);
            let n = (samples_per_cell as u128).min(cap) as usize;
            let idx = sample_indices(&mut rng, cap, n, &none);
            ((la, lb), cell_samples(la, lb, op, &idx))
        })
        .collect();
    let mut ds = Dataset::from_cells(cells, grid, seed, op, Split::Extrapolation, samples_per_cell);
    ds.manifest.extrapolation = Some(layout);
    Ok(ds)
}

/// Up to `per_cell` samples per cell drawn from `source` (train-vs-eval
/// comparison input).
pub fn subsample_per_cell(source: &Dataset, per_cell: usize, seed: u64) -> Dataset {
    let grid = source.grid();
    let mut rng = stream_rng(seed, Split::TrainSubsample);
    let mut buckets: Vec<Vec<&Sample>> = vec![Vec::new(); grid.cell_count()];
    for s in &source.samples {
        let (la, lb) = s.cell();
        if let Some(ci) = grid.cell_index(la, lb) {
            buckets[ci].push(s);
        }
    }
    let cells = grid
        .cells()
        .zip(buckets)
        .map(|(cell, bucket)| {
            let n = per_cell.min(bucket.len());
            let mut picked: Vec<usize> = index::sample(&mut rng, bucket.len(), n).into_vec();
            picked.sort_unstable();
            (cell, picked.into_iter().map(|i| bucket[i].clone()).collect())
        })
        .collect();
    Dataset::from_cells(cells, grid, seed, source.op(), Split::TrainSubsample, per_cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyField {
    Answer,
    All,
}

/// Digit-group token counts over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub system: NumeralSystem,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl TokenHistogram {
    pub fn relative(&self, value: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[value] as f64 / self.total as f64
        }
    }

    pub fn normalized_value(&self, value: usize) -> f64 {
        value as f64 / self.system.base() as f64
    }

    /// Values with a non-zero count.
    pub fn support(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&v| self.counts[v] > 0).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,normalized,count,frequency\n");
        for (v, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{v},{:.6},{c},{:.9}\n", self.normalized_value(v), self.relative(v)));
        }
        out
    }
}

pub fn token_frequency(ds: &Dataset, sys: NumeralSystem, field: FrequencyField) -> TokenHistogram {
    let mut counts = vec![0u64; sys.base() as usize];
    let mut tally = |n: &Number| {
        for g in to_groups(n, sys).0 {
            counts[g as usize] += 1;
        }
    };
    for s in &ds.samples {
        if field == FrequencyField::All {
            tally(&s.a);
            tally(&s.b);
        }
        tally(&s.answer);
    }
    let total = counts.iter().sum();
    TokenHistogram { system: sys, counts, total }
}

/// `train.jsonl` → `train.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io { path: path.to_path_buf(), source }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatagenError> {
    let (records, manifest) = ds.to_bytes();
    atomic_write(path, &records).map_err(io_err(path))?;
    let mpath = manifest_path(path);
    atomic_write(&mpath, &manifest).map_err(io_err(&mpath))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatagenError> {
    let mpath = manifest_path(path);
    let manifest_text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| DatagenError::Manifest { path: mpath.clone(), message: e.to_string() })?;
    let file = fs::File::open(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| DatagenError::Parse { path: path.to_path_buf(), line, message };
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if !s.is_consistent() {
            return Err(parse_err(i + 1, format!("answer {} != {} {} {}", s.answer, s.a, s.op, s.b)));
        }
        if s.op != manifest.op {
            return Err(parse_err(i + 1, format!("operation {} differs from manifest {}", s.op, manifest.op)));
        }
        if s.a.is_zero() || s.b.is_zero() {
            return Err(parse_err(i + 1, "operands must be positive".into()));
        }
        samples.push(s);
    }
    let ds = Dataset { samples, manifest };
    let manifest_err = |message: String| DatagenError::Manifest { path: mpath.clone(), message };
    let counts = ds.cell_counts();
    let realized: Vec<Vec<usize>> = counts.rows().into_iter().map(<[usize]>::to_vec).collect();
    if realized != ds.manifest.per_cell || ds.manifest.total != ds.samples.len() {
        return Err(manifest_err("per-cell counts do not match the records".into()));
    }
    if ds.duplicate_count() > 0 {
        return Err(manifest_err("dataset contains duplicate operand pairs".into()));
    }
    Ok(ds)
}

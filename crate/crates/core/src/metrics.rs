//! Scoring of generated answers: exact match, log-ratio and conventional
//! relative error, and normalized edit similarity over decimal digit strings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Sample;
use crate::fsio::atomic_write;
use crate::grid::{CellMatrix, LengthGrid};
use crate::numeral::{decode_answer, encode_answer, raw_digit_rendering, Decoded, Number, TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{outputs} outputs for {golds} gold samples")]
    Alignment { outputs: usize, golds: usize },
    #[error("sample {index} with lengths ({la}, {lb}) lies outside grid {grid}")]
    OutOfGrid { index: usize, la: usize, lb: usize, grid: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Token-level equality, EOS included.
pub fn exact_match(output: &[TokenId], gold: &[TokenId]) -> bool {
    output == gold
}

/// `|log10(o / g)|`; `None` when the output is invalid or zero.
pub fn rel_err_log(output: &Decoded, gold: &Number) -> Option<f64> {
    let o = output.value()?;
    if o.is_zero() || gold.is_zero() {
        return None;
    }
    Some((o.to_f64() / gold.to_f64()).log10().abs())
}

/// `|o - g| / g`; `None` when the output is invalid.
pub fn rel_err_conv(output: &Decoded, gold: &Number) -> Option<f64> {
    let o = output.value()?;
    if gold.is_zero() {
        return None;
    }
    Some(o.abs_diff(gold).to_f64() / gold.to_f64())
}

/// Levenshtein distance with unit costs, two rolling rows.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, &lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lc != sc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// `(max(m, n) - ed) / max(m, n)`; two empty strings count as identical.
pub fn ned(a: &str, b: &str) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    (longest - edit_distance(a, b)) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub exact_match: bool,
    pub rel_err_log: Option<f64>,
    pub rel_err_conv: Option<f64>,
    pub ned: f64,
    pub decoded: Decoded,
}

pub fn score_sample(output: &[TokenId], gold: &Number, vocab: &Vocabulary) -> SampleScore {
    let gold_tokens = encode_answer(gold, vocab);
    let decoded = decode_answer(output, vocab);
    let gold_digits = gold.to_decimal();
    let out_digits = match &decoded {
        Decoded::Valid(n) => n.to_decimal(),
        Decoded::Invalid => raw_digit_rendering(output, vocab),
    };
    SampleScore {
        exact_match: exact_match(output, &gold_tokens),
        rel_err_log: rel_err_log(&decoded, gold),
        rel_err_conv: rel_err_conv(&decoded, gold),
        ned: ned(&out_digits, &gold_digits),
        decoded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    pub exact_match: f64,
    pub ned: f64,
    pub rel_err_log: Option<f64>,
    pub rel_err_conv: Option<f64>,
    /// Share of outputs without a defined log-ratio error (invalid or zero).
    pub invalid_rate: f64,
}

/// Per-cell means plus aggregates. Cells without samples (or without valid
/// relative errors) hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub grid: LengthGrid,
    pub counts: CellMatrix<usize>,
    pub invalid: CellMatrix<usize>,
    pub exact_match: CellMatrix<Option<f64>>,
    pub ned: CellMatrix<Option<f64>>,
    pub rel_err_log: CellMatrix<Option<f64>>,
    pub rel_err_conv: CellMatrix<Option<f64>>,
    pub summary: MetricSummary,
    #[serde(skip)]
    pub scores: Vec<SampleScore>,
}

#[derive(Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn push_opt(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.push(v);
        }
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// How a sample maps to a matrix cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellKey {
    /// `(len a, len b)`.
    #[default]
    Ordered,
    /// `(longer, shorter)`, pooling both operand orders.
    LongShort,
}

impl CellKey {
    pub fn key(self, sample: &Sample) -> (usize, usize) {
        let (la, lb) = sample.cell();
        match self {
            CellKey::Ordered => (la, lb),
            CellKey::LongShort => (la.max(lb), la.min(lb)),
        }
    }
}

pub fn score_dataset(
    outputs: &[Vec<TokenId>],
    golds: &[Sample],
    grid: LengthGrid,
    vocab: &Vocabulary,
) -> Result<MetricReport, MetricsError> {
    score_dataset_keyed(outputs, golds, grid, vocab, CellKey::Ordered)
}

pub fn score_dataset_keyed(
    outputs: &[Vec<TokenId>],
    golds: &[Sample],
    grid: LengthGrid,
    vocab: &Vocabulary,
    key: CellKey,
) -> Result<MetricReport, MetricsError> {
    if outputs.len() != golds.len() {
        return Err(MetricsError::Alignment { outputs: outputs.len(), golds: golds.len() });
    }
    let cells = grid.cell_count();
    let mut em = vec![Mean::default(); cells];
    let mut nd = vec![Mean::default(); cells];
    let mut rl = vec![Mean::default(); cells];
    let mut rc = vec![Mean::default(); cells];
    let mut invalid = vec![0usize; cells];
    let (mut em_all, mut nd_all, mut rl_all, mut rc_all) =
        (Mean::default(), Mean::default(), Mean::default(), Mean::default());
    let mut invalid_all = 0usize;
    let mut scores = Vec::with_capacity(golds.len());

    for (index, (out, gold)) in outputs.iter().zip(golds).enumerate() {
        let (la, lb) = key.key(gold);
        let ci = grid
            .cell_index(la, lb)
            .ok_or_else(|| MetricsError::OutOfGrid { index, la, lb, grid: grid.describe() })?;
        let s = score_sample(out, &gold.answer, vocab);
        let hit = if s.exact_match { 1.0 } else { 0.0 };
        em[ci].push(hit);
        em_all.push(hit);
        nd[ci].push(s.ned);
        nd_all.push(s.ned);
        rl[ci].push_opt(s.rel_err_log);
        rl_all.push_opt(s.rel_err_log);
        rc[ci].push_opt(s.rel_err_conv);
        rc_all.push_opt(s.rel_err_conv);
        if s.rel_err_log.is_none() {
            invalid[ci] += 1;
            invalid_all += 1;
        }
        scores.push(s);
    }

    let matrix = |means: &[Mean]| CellMatrix { grid, values: means.iter().map(Mean::get).collect() };
    let n = golds.len();
    Ok(MetricReport {
        grid,
        counts: CellMatrix { grid, values: em.iter().map(|m| m.n).collect() },
        invalid: CellMatrix { grid, values: invalid },
        exact_match: matrix(&em),
        ned: matrix(&nd),
        rel_err_log: matrix(&rl),
        rel_err_conv: matrix(&rc),
        summary: MetricSummary {
            samples: n,
            exact_match: em_all.get().unwrap_or(0.0),
            ned: nd_all.get().unwrap_or(0.0),
            rel_err_log: rl_all.get(),
            rel_err_conv: rc_all.get(),
            invalid_rate: if n == 0 { 0.0 } else { invalid_all as f64 / n as f64 },
        },
        scores,
    })
}

pub fn format_cell(v: &Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    /// One matrix file per metric plus `summary.json`, all under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        let files = [
            ("exact_match.csv", self.exact_match.to_csv(format_cell)),
            ("ned.csv", self.ned.to_csv(format_cell)),
            ("rel_err_log.csv", self.rel_err_log.to_csv(format_cell)),
            ("rel_err_conv.csv", self.rel_err_conv.to_csv(format_cell)),
            ("counts.csv", self.counts.to_csv(|c| c.to_string())),
            ("invalid.csv", self.invalid.to_csv(|c| c.to_string())),
        ];
        let put = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            atomic_write(&path, bytes)
                .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
        };
        for (name, body) in files {
            put(name, body.as_bytes())?;
        }
        let mut summary = serde_json::to_vec_pretty(self).expect("report serializes");
        summary.push(b'\n');
        put("summary.json", &summary)
    }

    pub fn read(dir: &Path) -> Result<Self, MetricsError> {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

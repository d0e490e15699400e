//! Classification of length-extrapolation outputs.
//!
//! Addition outputs are compared against arithmetic on operands truncated to
//! the longest token length seen in training. The truncation keeps the
//! leading groups and drops the rest, so `T(83186863480) = 8318686348` under
//! base 10 with ten trained tokens.
//!
//! The carry probe mirrors what a model that adds `b` at the last trained
//! position would need: the first dropped group of the long operand plus the
//! group of the other operand aligned with it. When that sum reaches the
//! base, a bare truncated sum is a missed carry rather than clean truncated
//! addition.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::fsio::atomic_write;
use crate::grid::{CellMatrix, LengthGrid};
use crate::numeral::{
    answer_span, decode_answer, from_groups, render_groups, to_groups, Decoded, Number, NumeralSystem, Operation,
    TokenId, Vocabulary,
};

pub fn truncate(n: &Number, sys: NumeralSystem, max_tokens: usize) -> Number {
    let groups = to_groups(n, sys).0;
    let keep = groups.len().min(max_tokens.max(1));
    from_groups(&groups[..keep], sys).expect("groups come from to_groups")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternTag {
    Exact,
    TruncatedAdd,
    TruncatedAddCarry,
    MisalignedTruncated,
    Other,
}

impl PatternTag {
    pub const ALL: [PatternTag; 5] = [
        Self::Exact,
        Self::TruncatedAdd,
        Self::TruncatedAddCarry,
        Self::MisalignedTruncated,
        Self::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::TruncatedAdd => "truncated_add",
            Self::TruncatedAddCarry => "truncated_add_carry",
            Self::MisalignedTruncated => "misaligned_truncated",
            Self::Other => "other",
        }
    }
}

/// The arithmetic a label was matched against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub truncated_a: Number,
    pub truncated_b: Number,
    pub truncated_sum: Number,
    pub carry_expected: bool,
    pub predicted: Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtrapolationLabel {
    pub tag: PatternTag,
    pub evidence: Option<Evidence>,
}

fn dropped_groups(n: &Number, sys: NumeralSystem, max_tokens: usize) -> Vec<u32> {
    let groups = to_groups(n, sys).0;
    groups.get(max_tokens..).map(<[u32]>::to_vec).unwrap_or_default()
}

fn carry_expected(a: &Number, b: &Number, sys: NumeralSystem, max_tokens: usize) -> bool {
    let (da, db) = (dropped_groups(a, sys, max_tokens), dropped_groups(b, sys, max_tokens));
    if da.is_empty() && db.is_empty() {
        return false;
    }
    let probe = |dropped: &[u32], n: &Number| match dropped.first() {
        Some(&g) => g,
        None => *to_groups(n, sys).0.last().expect("non-empty groups"),
    };
    probe(&da, a) + probe(&db, b) >= sys.base()
}

pub fn classify_addition(
    sample: &Sample,
    output: &Decoded,
    sys: NumeralSystem,
    max_trained_tokens: usize,
) -> ExtrapolationLabel {
    debug_assert_eq!(sample.op, Operation::Add);
    let Some(predicted) = output.value() else {
        return ExtrapolationLabel { tag: PatternTag::Other, evidence: None };
    };
    if *predicted == sample.answer {
        return ExtrapolationLabel { tag: PatternTag::Exact, evidence: None };
    }
    let truncated_a = truncate(&sample.a, sys, max_trained_tokens);
    let truncated_b = truncate(&sample.b, sys, max_trained_tokens);
    let truncated_sum = &truncated_a + &truncated_b;
    let carry = carry_expected(&sample.a, &sample.b, sys, max_trained_tokens);

    let tag = if *predicted == truncated_sum && !carry {
        PatternTag::TruncatedAdd
    } else if *predicted == &truncated_sum + 1 {
        PatternTag::TruncatedAddCarry
    } else if is_misaligned(sample, predicted, &truncated_sum, sys, max_trained_tokens) {
        PatternTag::MisalignedTruncated
    } else {
        PatternTag::Other
    };
    ExtrapolationLabel {
        tag,
        evidence: Some(Evidence { truncated_a, truncated_b, truncated_sum, carry_expected: carry, predicted: predicted.clone() }),
    }
}

/// Truncated sum followed by the true sum's groups past the trained length.
fn is_misaligned(
    sample: &Sample,
    predicted: &Number,
    truncated_sum: &Number,
    sys: NumeralSystem,
    max_tokens: usize,
) -> bool {
    let dropped = dropped_groups(&sample.a, sys, max_tokens)
        .len()
        .max(dropped_groups(&sample.b, sys, max_tokens).len());
    if dropped == 0 {
        return false;
    }
    let sum_groups = to_groups(&sample.answer, sys).0;
    if sum_groups.len() < dropped {
        return false;
    }
    let tail = &sum_groups[sum_groups.len() - dropped..];
    let width = sys.group_width();
    let mut expected = truncated_sum.to_decimal();
    for g in tail {
        expected.push_str(&format!("{g:0width$}"));
    }
    expected == predicted.to_decimal()
}

/// Fractions of multiplication outputs with correct edge tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulEdgeStats {
    pub samples: usize,
    pub k: usize,
    pub leading: f64,
    pub trailing: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeMatch {
    pub leading: bool,
    pub trailing: bool,
    pub length: bool,
}

pub fn mul_edge_match(truth: &Number, output: &[TokenId], vocab: &Vocabulary, k: usize) -> EdgeMatch {
    if !decode_answer(output, vocab).is_valid() {
        return EdgeMatch { leading: false, trailing: false, length: false };
    }
    let out = answer_span(output, vocab);
    let gold = to_groups(truth, vocab.system).0;
    let k = k.min(gold.len());
    let fits = out.len() >= k;
    EdgeMatch {
        leading: fits && out[..k] == gold[..k],
        trailing: fits && out[out.len() - k..] == gold[gold.len() - k..],
        length: out.len() == gold.len(),
    }
}

pub fn mul_edge_stats(samples: &[Sample], outputs: &[Vec<TokenId>], vocab: &Vocabulary, k: usize) -> MulEdgeStats {
    let n = samples.len().min(outputs.len());
    let (mut lead, mut trail, mut len) = (0usize, 0usize, 0usize);
    for (s, out) in samples.iter().zip(outputs) {
        let m = mul_edge_match(&s.answer, out, vocab, k);
        lead += usize::from(m.leading);
        trail += usize::from(m.trailing);
        len += usize::from(m.length);
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    MulEdgeStats { samples: n, k, leading: frac(lead), trailing: frac(trail), length: frac(len) }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub exact: usize,
    pub truncated_add: usize,
    pub truncated_add_carry: usize,
    pub misaligned_truncated: usize,
    pub other: usize,
}

impl LabelCounts {
    pub fn add(&mut self, tag: PatternTag) {
        *self.slot(tag) += 1;
    }

    fn slot(&mut self, tag: PatternTag) -> &mut usize {
        match tag {
            PatternTag::Exact => &mut self.exact,
            PatternTag::TruncatedAdd => &mut self.truncated_add,
            PatternTag::TruncatedAddCarry => &mut self.truncated_add_carry,
            PatternTag::MisalignedTruncated => &mut self.misaligned_truncated,
            PatternTag::Other => &mut self.other,
        }
    }

    pub fn get(&self, tag: PatternTag) -> usize {
        match tag {
            PatternTag::Exact => self.exact,
            PatternTag::TruncatedAdd => self.truncated_add,
            PatternTag::TruncatedAddCarry => self.truncated_add_carry,
            PatternTag::MisalignedTruncated => self.misaligned_truncated,
            PatternTag::Other => self.other,
        }
    }

    pub fn total(&self) -> usize {
        PatternTag::ALL.iter().map(|&t| self.get(t)).sum()
    }

    pub fn frequency(&self, tag: PatternTag) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.get(tag) as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub cells: CellMatrix<LabelCounts>,
    pub aggregate: LabelCounts,
}

pub fn pattern_report(labels: &[((usize, usize), PatternTag)], grid: LengthGrid) -> PatternReport {
    let mut cells = CellMatrix::filled(grid, LabelCounts::default());
    let mut aggregate = LabelCounts::default();
    for &((la, lb), tag) in labels {
        if let Some(c) = cells.get_mut(la, lb) {
            c.add(tag);
        }
        aggregate.add(tag);
    }
    PatternReport { cells, aggregate }
}

impl PatternReport {
    /// Structured text keyed by cell, with counts and frequencies.
    pub fn to_json(&self) -> serde_json::Value {
        let freq = |c: &LabelCounts| {
            PatternTag::ALL
                .iter()
                .map(|&t| (t.as_str().to_string(), serde_json::json!(c.frequency(t))))
                .collect::<serde_json::Map<_, _>>()
        };
        let grid = self.cells.grid;
        let cells: Vec<_> = grid
            .cells()
            .zip(&self.cells.values)
            .map(|((la, lb), c)| serde_json::json!({ "la": la, "lb": lb, "counts": c, "frequencies": freq(c) }))
            .collect();
        serde_json::json!({
            "grid": grid,
            "cells": cells,
            "aggregate": { "counts": self.aggregate, "frequencies": freq(&self.aggregate) },
        })
    }
}

/// One inspected case, exportable as a line-delimited record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub la: usize,
    pub lb: usize,
    pub a: Number,
    pub b: Number,
    pub truth: Number,
    pub output: String,
    pub label: ExtrapolationLabel,
}

pub fn classify_dataset(
    samples: &[Sample],
    outputs: &[Vec<TokenId>],
    vocab: &Vocabulary,
    max_trained_tokens: usize,
) -> Vec<LabeledCase> {
    samples
        .iter()
        .zip(outputs)
        .filter(|(s, _)| s.op == Operation::Add)
        .map(|(s, out)| {
            let decoded = decode_answer(out, vocab);
            let (la, lb) = s.cell();
            LabeledCase {
                la,
                lb,
                a: s.a.clone(),
                b: s.b.clone(),
                truth: s.answer.clone(),
                output: vocab.describe(out),
                label: classify_addition(s, &decoded, vocab.system, max_trained_tokens),
            }
        })
        .collect()
}

pub fn write_cases(cases: &[LabeledCase], path: &Path) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for c in cases {
        serde_json::to_writer(&mut buf, c).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Display form with a comma after the trained length, e.g. `7 34 76 64 43, 03`.
pub fn render_with_boundary(n: &Number, sys: NumeralSystem, max_tokens: usize) -> String {
    let groups = to_groups(n, sys).0;
    let width = sys.group_width();
    let parts: Vec<String> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| if i == 0 { g.to_string() } else { format!("{g:0width$}") })
        .collect();
    let sep = if width == 1 { "" } else { " " };
    if groups.len() > max_tokens {
        format!("{}, {}", parts[..max_tokens].join(sep), parts[max_tokens..].join(sep))
    } else {
        render_groups(&groups, sys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: u128) -> Number {
        Number::from(v)
    }

    fn add(a: u128, b: u128) -> Sample {
        Sample::new(num(a), num(b), Operation::Add)
    }

    fn label(a: u128, b: u128, out: u128, sys: NumeralSystem, max: usize) -> PatternTag {
        classify_addition(&add(a, b), &Decoded::Valid(num(out)), sys, max).tag
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(&num(83186863480), NumeralSystem::Base10, 10), num(8318686348));
        assert_eq!(truncate(&num(73476644303), NumeralSystem::Base100, 5), num(734766443));
        assert_eq!(truncate(&num(1234), NumeralSystem::Base1000, 4), num(1234));
        assert_eq!(truncate(&num(2929747175022), NumeralSystem::Base1000, 4), num(2929747175));
    }

    #[test]
    fn boundary_rendering() {
        assert_eq!(render_with_boundary(&num(83186863480), NumeralSystem::Base10, 10), "8318686348, 0");
        assert_eq!(render_with_boundary(&num(73476644303), NumeralSystem::Base100, 5), "7 34 76 64 43, 03");
        assert_eq!(render_with_boundary(&num(2929747175022), NumeralSystem::Base1000, 4), "2 929 747 175, 022");
    }

    #[test]
    fn base10_cases() {
        use NumeralSystem::Base10;
        assert_eq!(label(83186863480, 3, 8318686351, Base10, 10), PatternTag::TruncatedAdd);
        assert_eq!(label(39682995318, 2, 3968299534, Base10, 10), PatternTag::TruncatedAddCarry);
        // scratch-model misalignment: the 1 lands on several positions
        assert_eq!(label(26350789807, 1, 2635079091, Base10, 10), PatternTag::Other);
    }

    #[test]
    fn missed_carry_is_other_with_evidence() {
        let l = classify_addition(&add(72837465947, 94), &Decoded::Valid(num(728374753)), NumeralSystem::Base100, 5);
        assert_eq!(l.tag, PatternTag::Other);
        let ev = l.evidence.unwrap();
        assert!(ev.carry_expected);
        assert_eq!(ev.truncated_sum, num(728374753));
    }

    #[test]
    fn exact_and_invalid() {
        let s = add(83186863480, 3);
        let exact = classify_addition(&s, &Decoded::Valid(num(83186863483)), NumeralSystem::Base10, 10);
        assert_eq!(exact, ExtrapolationLabel { tag: PatternTag::Exact, evidence: None });
        let bad = classify_addition(&s, &Decoded::Invalid, NumeralSystem::Base10, 10);
        assert_eq!(bad, ExtrapolationLabel { tag: PatternTag::Other, evidence: None });
    }

    #[test]
    fn in_distribution_reports_exact() {
        assert_eq!(label(123, 45, 168, NumeralSystem::Base10, 10), PatternTag::Exact);
    }

    #[test]
    fn mul_edges_table_case() {
        let v = Vocabulary::new(NumeralSystem::Base10);
        let truth = num(44527557923 * 8);
        assert_eq!(truth, num(356220463384));
        let mut out = to_groups(&num(358888899984), NumeralSystem::Base10).0;
        out.push(v.eos());
        let m = mul_edge_match(&truth, &out, &v, 2);
        assert_eq!(m, EdgeMatch { leading: true, trailing: true, length: true });
        let m = mul_edge_match(&truth, &[v.eos()], &v, 2);
        assert_eq!(m, EdgeMatch { leading: false, trailing: false, length: false });
        let mut exact = to_groups(&truth, NumeralSystem::Base10).0;
        exact.push(v.eos());
        let s = Sample::new(num(44527557923), num(8), Operation::Mul);
        let stats = mul_edge_stats(&[s.clone(), s], &[exact, vec![v.eos()]], &v, 2);
        assert_eq!((stats.leading, stats.trailing, stats.length), (0.5, 0.5, 0.5));
    }

    #[test]
    fn pattern_frequencies_sum_to_one() {
        let grid = LengthGrid::new((11, 12), (1, 1)).unwrap();
        let labels = vec![
            ((11, 1), PatternTag::Exact),
            ((11, 1), PatternTag::Other),
            ((12, 1), PatternTag::TruncatedAdd),
        ];
        let r = pattern_report(&labels, grid);
        for c in &r.cells.values {
            let s: f64 = PatternTag::ALL.iter().map(|&t| c.frequency(t)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.aggregate.total(), 3);
        let json = r.to_json();
        assert_eq!(json["cells"][0]["frequencies"]["exact"], 0.5);
    }
}

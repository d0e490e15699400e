//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,8` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use numbase::analysis::{classify_addition, render_with_boundary, truncate, PatternTag};
use numbase::datagen::{
    generate_eval, generate_extrapolation, generate_train, token_frequency, ExtrapolationLayout, FrequencyField,
    Operation, Sample,
};
use numbase::experiment::{evaluate, run_grid, GridSpec, RunRecord};
use numbase::grid::LengthGrid;
use numbase::metrics::{edit_distance, ned, rel_err_conv, rel_err_log, CellKey};
use numbase::model::{grad_check, train, Batch, GradCheckSettings, ModelConfig, ParamGroup, TrainConfig, TransformerParams};
use numbase::numeral::{digit_length, encode_sample, from_groups, to_groups, Decoded, Number, NumeralSystem, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(5);
const EDIT_ORACLE_BUDGET: Duration = Duration::from_secs(60);
const QUOTA_BUDGET: Duration = Duration::from_secs(30);
const EXTRAPOLATION_BUDGET: Duration = Duration::from_secs(10);
const GRAD_CHECK_BUDGET: Duration = Duration::from_secs(60);
const LEARNABILITY_BUDGET: Duration = Duration::from_secs(15 * 60);
const TREND_BUDGET: Duration = Duration::from_secs(90 * 60);

const LEARNABILITY_MIN_EXACT: f64 = 0.90;
const GRAD_CHECK_MAX_DEVIATION: f64 = 1e-4;
const SCALE_INVARIANCE_TOLERANCE: f64 = 1e-12;
const FREQUENCY_RATIO: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget: Duration) -> bool {
    elapsed <= budget
}

fn num(n: u128) -> Number {
    Number::from(n)
}

fn c1_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for _ in 0..100_000 {
        let n = num(rng.gen_range(0..10u128.pow(16)));
        for sys in NumeralSystem::ALL {
            if from_groups(to_groups(&n, sys).groups(), sys).ok().as_ref() != Some(&n) {
                failures += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(failures == 0 && within(t, ROUND_TRIP_BUDGET), format!("{failures} failures over 3 x 10^5 round trips in {t:.2?}"))
}

/// Every string of length <= 6 over {0,1,2}, indexed by (length, value).
fn ternary_strings() -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for len in 1..=6u32 {
        for v in 0..3usize.pow(len) {
            let mut s = vec![0u8; len as usize];
            let mut x = v;
            for slot in s.iter_mut().rev() {
                *slot = b'0' + (x % 3) as u8;
                x /= 3;
            }
            out.push(s);
        }
    }
    out
}

/// Unit-cost edit distance by recursion over the first characters, with
/// results cached per suffix pair.
struct RecursiveOracle {
    index: BTreeMap<Vec<u8>, usize>,
    memo: Vec<u8>,
    n: usize,
}

impl RecursiveOracle {
    fn new(strings: &[Vec<u8>]) -> Self {
        let index = strings.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { index, memo: vec![u8::MAX; strings.len() * strings.len()], n: strings.len() }
    }

    fn dist(&mut self, a: &[u8], b: &[u8]) -> u8 {
        if a.is_empty() {
            return b.len() as u8;
        }
        if b.is_empty() {
            return a.len() as u8;
        }
        let key = self.index[a] * self.n + self.index[b];
        if self.memo[key] != u8::MAX {
            return self.memo[key];
        }
        let substitute = self.dist(&a[1..], &b[1..]) + u8::from(a[0] != b[0]);
        let delete = self.dist(&a[1..], b) + 1;
        let insert = self.dist(a, &b[1..]) + 1;
        let d = substitute.min(delete).min(insert);
        self.memo[key] = d;
        d
    }
}

fn c2_edit_distance_oracle() -> Outcome {
    let start = Instant::now();
    let strings = ternary_strings();
    let mut oracle = RecursiveOracle::new(&strings);
    let text: Vec<String> = strings.iter().map(|s| String::from_utf8(s.clone()).unwrap()).collect();
    let (mut pairs, mut mismatches) = (0usize, 0usize);
    for (i, a) in strings.iter().enumerate() {
        for (j, b) in strings.iter().enumerate() {
            pairs += 1;
            if edit_distance(&text[i], &text[j]) != oracle.dist(a, b) as usize {
                mismatches += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(mismatches == 0 && within(t, EDIT_ORACLE_BUDGET), format!("{mismatches} mismatches over {pairs} pairs in {t:.2?}"))
}

fn c3_worked_examples() -> Outcome {
    use NumeralSystem::*;
    let mut problems = Vec::new();
    let s = ned("83186863483", "8318686351");
    if s != 8.0 / 11.0 {
        problems.push(format!("ned = {s}"));
    }
    let rows: [(NumeralSystem, u128, u128, u128, PatternTag); 6] = [
        (Base10, 83186863480, 3, 8318686351, PatternTag::TruncatedAdd),
        (Base10, 39682995318, 2, 3968299534, PatternTag::TruncatedAddCarry),
        (Base100, 73476644303, 3, 734766446, PatternTag::TruncatedAdd),
        (Base100, 16347531081, 2, 16347531283, PatternTag::MisalignedTruncated),
        (Base100, 72837465947, 94, 728374753, PatternTag::Other),
        (Base1000, 8748392297087, 2, 8748392299089, PatternTag::MisalignedTruncated),
    ];
    let mut counts = BTreeMap::new();
    for (sys, a, b, out, want) in rows {
        let sample = Sample::new(num(a), num(b), Operation::Add);
        let got = classify_addition(&sample, &Decoded::Valid(num(out)), sys, sys.tokens_for_digits(10)).tag;
        *counts.entry(got.as_str()).or_insert(0) += 1;
        if got != want {
            problems.push(format!("{a}+{b} -> {out}: {} not {}", got.as_str(), want.as_str()));
        }
    }
    // The remaining two rows of the same case table.
    let extra: [(NumeralSystem, u128, u128, u128, PatternTag); 2] = [
        (Base1000, 2929747175022, 9, 2929747184, PatternTag::TruncatedAdd),
        (Base1000, 8172938472837, 494, 8172938966, PatternTag::Other),
    ];
    for (sys, a, b, out, want) in extra {
        let sample = Sample::new(num(a), num(b), Operation::Add);
        let got = classify_addition(&sample, &Decoded::Valid(num(out)), sys, sys.tokens_for_digits(10)).tag;
        if got != want {
            problems.push(format!("{a}+{b} -> {out}: {} not {}", got.as_str(), want.as_str()));
        }
    }
    let truncations = [
        (Base10, 83186863480u128, 8318686348u128, "8318686348, 0"),
        (Base100, 73476644303, 734766443, "7 34 76 64 43, 03"),
        (Base1000, 2929747175022, 2929747175, "2 929 747 175, 022"),
    ];
    for (sys, n, want, shown) in truncations {
        let max = sys.tokens_for_digits(10);
        if truncate(&num(n), sys, max) != num(want) {
            problems.push(format!("truncate({n}) under base {}", sys.base()));
        }
        let r = render_with_boundary(&num(n), sys, max);
        if r != shown {
            problems.push(format!("rendered {r:?}, expected {shown:?}"));
        }
    }
    let detail = if problems.is_empty() {
        format!("ned 8/11 exact; six-row labels {counts:?}; both base-1000 extra rows match; truncations match")
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn c4_generator_quotas() -> Outcome {
    let start = Instant::now();
    let grid = LengthGrid::square(10).unwrap();
    let eval = generate_eval(Operation::Add, 1000, grid, 0).unwrap();
    let train = generate_train(Operation::Add, 1 << 13, grid, &eval, 0).unwrap();
    let (tc, ec) = (train.cell_counts(), eval.cell_counts());
    let (t11, e11) = (*tc.get(1, 1).unwrap(), *ec.get(1, 1).unwrap());
    let dups = train.duplicate_count() + eval.duplicate_count();
    let overlap = train.overlap_count(&eval);
    let t = start.elapsed();
    let pass = t11 == 41 && e11 == 40 && dups == 0 && overlap == 0 && train.len() == 1 << 13 && within(t, QUOTA_BUDGET);
    outcome(
        pass,
        format!("cell (1,1) train {t11} eval {e11}; duplicates {dups}; overlap {overlap}; total {} in {t:.2?}", train.len()),
    )
}

fn c5_extrapolation_set() -> Outcome {
    let start = Instant::now();
    let ds = generate_extrapolation(Operation::Add, 100, ExtrapolationLayout::default(), 0).unwrap();
    let in_range = ds.samples.iter().all(|s| (11..=15).contains(&digit_length(&s.a).max(digit_length(&s.b))));
    let t = start.elapsed();
    outcome(
        ds.len() == 5000 && in_range && within(t, EXTRAPOLATION_BUDGET),
        format!("{} samples, longer operand in 11..=15: {in_range}, in {t:.2?}", ds.len()),
    )
}

fn c6_token_frequency() -> Outcome {
    let ratio = || {
        let grid = LengthGrid::square(10).unwrap();
        let eval = generate_eval(Operation::Mul, 1000, grid, 0).unwrap();
        let train = generate_train(Operation::Mul, 1 << 13, grid, &eval, 0).unwrap();
        let h = token_frequency(&train, NumeralSystem::Base1000, FrequencyField::Answer);
        let small = (0..10).map(|v| h.counts[v] as f64).sum::<f64>() / 10.0;
        let mut large: Vec<u64> = h.counts[100..1000].to_vec();
        large.sort_unstable();
        let median = (large[449] + large[450]) as f64 / 2.0;
        (small, median)
    };
    let (small, median) = ratio();
    let repeat = ratio();
    let pass = small >= FREQUENCY_RATIO * median && repeat == (small, median);
    outcome(pass, format!("mean count of 0-9 {small:.1}, median count of 100-999 {median:.1}, ratio {:.1}", small / median))
}

fn c7_grad_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 64, context_length: 24, vocab_size: 15, ..Default::default() };
    let params = TransformerParams::<f64>::init(cfg, 0).unwrap();
    let v = Vocabulary::new(NumeralSystem::Base10);
    let samples: Vec<_> =
        [(123u128, 989u128), (7, 45), (5012, 88)].iter().map(|&(a, b)| encode_sample(&num(a), &num(b), Operation::Add, &v)).collect();
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>(), v.pad());
    let r = grad_check(&params, &batch, &GradCheckSettings::default()).unwrap();
    let covered = ParamGroup::ALL.iter().all(|g| r.groups.contains(g));
    let t = start.elapsed();
    outcome(
        r.max_rel_deviation < GRAD_CHECK_MAX_DEVIATION && covered && within(t, GRAD_CHECK_BUDGET),
        format!("max relative deviation {:.3e} at {} over {} entries, all groups {covered}, in {t:.2?}", r.max_rel_deviation, r.worst, r.checked),
    )
}

fn c8_learnability() -> Outcome {
    let start = Instant::now();
    let grid = LengthGrid::square(3).unwrap();
    let eval = generate_eval(Operation::Add, 1000, grid, 0).unwrap();
    let train_ds = generate_train(Operation::Add, 1 << 13, grid, &eval, 0).unwrap();
    let v = Vocabulary::new(NumeralSystem::Base10);
    let tcfg = TrainConfig::default();
    let mut params = TransformerParams::<f32>::init(ModelConfig::for_vocab(&v), tcfg.seed).unwrap();
    let out = train(&mut params, &train_ds, &v, &tcfg).unwrap();
    let (report, _) = evaluate(&params, &eval, &v, grid, CellKey::Ordered).unwrap();
    let finite = out.loss_curve.losses.iter().all(|l| l.is_finite());
    let em = report.summary.exact_match;
    let t = start.elapsed();
    outcome(
        em >= LEARNABILITY_MIN_EXACT && finite && within(t, LEARNABILITY_BUDGET),
        format!(
            "exact match {em:.4} on {} held-out pairs after {} epochs ({} steps, final loss {:.4}) in {t:.0?}",
            eval.len(),
            tcfg.epochs,
            out.steps,
            out.loss_curve.last().unwrap_or(f64::NAN)
        ),
    )
}

/// Model and optimizer for the three-system trend run; same settings for every system.
fn trend_spec() -> GridSpec {
    GridSpec {
        systems: vec![10, 100, 1000],
        ops: vec![Operation::Add],
        scales: vec![14],
        seeds: vec![0, 1, 2],
        max_digits: 5,
        eval_per_cell: 200,
        train_subsample_per_cell: 40,
        extrapolation_per_cell: None,
        model: ModelConfig { n_layers: 3, n_heads: 4, d_model: 128, d_ff: 512, context_length: 32, ..Default::default() },
        train: TrainConfig { learning_rate: 3e-4, batch_size: 32, ..Default::default() },
    }
}

fn exact_by_seed(records: &[RunRecord], base: u32) -> BTreeMap<u64, f64> {
    records.iter().filter(|r| r.system.base() == base).map(|r| (r.seed, r.eval.exact_match)).collect()
}

fn c9_trend() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let configs = trend_spec().expand().unwrap();
    let records = run_grid(&configs, dir.path()).unwrap().records;
    let t = start.elapsed();
    let (b10, b100, b1000) = (exact_by_seed(&records, 10), exact_by_seed(&records, 100), exact_by_seed(&records, 1000));
    let mean = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / m.len() as f64;
    let wins = |x: &BTreeMap<u64, f64>, y: &BTreeMap<u64, f64>, strict: bool| {
        x.iter().filter(|(s, a)| if strict { **a > y[s] } else { **a >= y[s] }).count()
    };
    let (m10, m100, m1000) = (mean(&b10), mean(&b100), mean(&b1000));
    let (w1, w2) = (wins(&b10, &b100, true), wins(&b100, &b1000, false));
    let pass = m10 > m100 && m100 >= m1000 && w1 >= 2 && w2 >= 2 && within(t, TREND_BUDGET);
    outcome(
        pass,
        format!(
            "mean exact match base10 {m10:.4} base100 {m100:.4} base1000 {m1000:.4}; seeds 10>100 {w1}/3, 100>=1000 {w2}/3; per seed {b10:.4?} {b100:.4?} {b1000:.4?}; in {t:.0?}"
        ),
    )
}

fn c10_metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let o: u128 = rng.gen_range(1..1_000_000_000_000);
        let g: u128 = rng.gen_range(1..1_000_000_000_000);
        let k: u128 = rng.gen_range(1..1_000_000);
        let base = rel_err_log(&Decoded::Valid(num(o)), &num(g)).unwrap();
        let scaled = rel_err_log(&Decoded::Valid(num(o * k)), &num(g * k)).unwrap();
        worst = worst.max((base - scaled).abs());
    }
    let conv = rel_err_conv(&Decoded::Valid(num(35)), &num(36)).unwrap();

    // A small model trained long enough to get a mix of right and wrong answers.
    let grid = LengthGrid::square(2).unwrap();
    let eval = generate_eval(Operation::Add, 40, grid, 3).unwrap();
    let train_ds = generate_train(Operation::Add, 1 << 11, grid, &eval, 3).unwrap();
    let v = Vocabulary::new(NumeralSystem::Base10);
    let mcfg = ModelConfig { n_layers: 2, n_heads: 2, d_model: 32, d_ff: 128, context_length: 16, ..ModelConfig::for_vocab(&v) };
    let tcfg = TrainConfig { epochs: 4, batch_size: 32, learning_rate: 3e-3, ..Default::default() };
    let mut params = TransformerParams::<f32>::init(mcfg, 3).unwrap();
    train(&mut params, &train_ds, &v, &tcfg).unwrap();
    let (report, _) = evaluate(&params, &eval, &v, grid, CellKey::Ordered).unwrap();
    let exact: Vec<_> = report.scores.iter().filter(|s| s.exact_match).collect();
    let identity = exact.iter().all(|s| s.ned == 1.0);

    let pass = worst < SCALE_INVARIANCE_TOLERANCE && conv == 1.0 / 36.0 && identity;
    outcome(
        pass,
        format!(
            "scale invariance max deviation {worst:.2e}; rel_err_conv(35,36) = 1/36: {}; exact implies ned 1 on {}/{} exact samples",
            conv == 1.0 / 36.0,
            exact.len(),
            report.scores.len()
        ),
    )
}

fn pipeline(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let bin = env!("CARGO_BIN_EXE_numbase");
    std::fs::write(root.join("model.json"), r#"{"n_layers":1,"n_heads":2,"d_model":32,"d_ff":64,"context_length":24}"#).unwrap();
    std::fs::write(root.join("train.json"), r#"{"epochs":2,"batch_size":32}"#).unwrap();
    let steps: [&[&str]; 3] = [
        &["gen", "--op", "add", "--scale", "10", "--grid", "3", "--seed", "7", "--eval-per-cell", "50", "--out", "data"],
        &["train", "--data", "data", "--base", "10", "--model-cfg", "model.json", "--train-cfg", "train.json", "--seed", "7", "--out", "run"],
        &["eval", "--ckpt", "run/model.ckpt", "--data", "data", "--base", "10", "--out", "eval"],
    ];
    for args in steps {
        let out = Command::new(bin).args(args).current_dir(root).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let mut files: Vec<_> = std::fs::read_dir(root.join("eval")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.push(root.join("run/model.ckpt"));
    Ok(files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())).collect())
}

fn c11_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<_> = x.iter().zip(&y).filter(|(p, q)| p != q).map(|(p, _)| p.0.clone()).collect();
            let pass = differing.is_empty() && x.len() == y.len() && x.len() > 1;
            outcome(pass, format!("{} output files compared byte for byte, differing: {differing:?}", x.len()))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("pipeline failed: {e}")),
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "numeral round trip", c1_round_trip),
        (2, "edit-distance oracle", c2_edit_distance_oracle),
        (3, "worked-example golden tests", c3_worked_examples),
        (4, "generator quotas", c4_generator_quotas),
        (5, "extrapolation set", c5_extrapolation_set),
        (6, "token-frequency property", c6_token_frequency),
        (7, "gradient fidelity", c7_grad_check),
        (8, "learnability smoke", c8_learnability),
        (9, "directional trend", c9_trend),
        (10, "metric identities", c10_metric_identities),
        (11, "determinism", c11_determinism),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let r = run();
        println!("criterion {id:>2} {} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        if !r.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

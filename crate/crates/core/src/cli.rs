//! The `numbase` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::analysis::{classify_dataset, mul_edge_stats, pattern_report, write_cases, PatternTag};
use crate::datagen::{
    generate_eval, generate_extrapolation, generate_train, read_dataset, subsample_per_cell, token_frequency,
    write_dataset, DatagenError, ExtrapolationLayout, FrequencyField,
};
use crate::experiment::{evaluate, load_records, overfit_report, run_grid, trend_report, ExperimentError, GridSpec};
use crate::fsio::atomic_write;
use crate::grid::LengthGrid;
use crate::metrics::{CellKey, MetricsError};
use crate::model::{load_checkpoint_for, save_checkpoint, train_encoded, ModelConfig, ModelError, TrainConfig, TransformerParams};
use crate::numeral::{encode_sample, NumeralSystem, Operation, Vocabulary};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INVALID_INPUT: i32 = 4;
pub const EXIT_CORRUPT_CHECKPOINT: i32 = 5;
pub const EXIT_TRAINING: i32 = 6;
pub const EXIT_INCOMPARABLE: i32 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::InvalidInput(_) => EXIT_INVALID_INPUT,
            CliError::Datagen(DatagenError::Io { .. }) => EXIT_IO,
            CliError::Datagen(_) => EXIT_INVALID_INPUT,
            CliError::Metrics(MetricsError::Io { .. }) => EXIT_IO,
            CliError::Metrics(_) => EXIT_INVALID_INPUT,
            CliError::Model(e) => model_code(e),
            CliError::Experiment(e) => match e {
                ExperimentError::Io { .. } => EXIT_IO,
                ExperimentError::Comparability(_) => EXIT_INCOMPARABLE,
                ExperimentError::Run { source, .. } | ExperimentError::Model(source) => model_code(source),
                ExperimentError::Datagen(DatagenError::Io { .. }) | ExperimentError::Metrics(MetricsError::Io { .. }) => EXIT_IO,
                _ => EXIT_INVALID_INPUT,
            },
        }
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Corrupt { .. } => EXIT_CORRUPT_CHECKPOINT,
        ModelError::Io { .. } => EXIT_IO,
        ModelError::NonFiniteLoss { .. } => EXIT_TRAINING,
        _ => EXIT_INVALID_INPUT,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "numbase", version, about = "Numeral-system arithmetic lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate canonical train, eval and train-subsample datasets.
    Gen(GenArgs),
    /// Train a model from scratch and write a checkpoint.
    Train(TrainArgs),
    /// Decode a dataset with a checkpoint and write metric matrices.
    Eval(EvalArgs),
    /// Generate the longer-operand set, decode, score and classify.
    Extrapolate(ExtrapolateArgs),
    /// Token-value histogram of a dataset under one numeral system.
    Freq(FreqArgs),
    /// Run an experiment grid, skipping completed runs.
    Grid(GridArgs),
    /// Trend, train-versus-eval and pattern tables from grid runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OpArg {
    Add,
    Mul,
}

impl From<OpArg> for Operation {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Add => Operation::Add,
            OpArg::Mul => Operation::Mul,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FieldArg {
    Answer,
    All,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub op: OpArg,
    /// Training set size as a power of two.
    #[arg(long)]
    pub scale: u32,
    /// `N` for lengths 1..=N on both operands, or `A-B,C-D`.
    #[arg(long, default_value = "10")]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub eval_per_cell: usize,
    #[arg(long, default_value_t = 1000)]
    pub train_subsample_per_cell: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training records file, or a directory holding `train.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub base: u32,
    /// JSON model configuration; omitted fields take defaults.
    #[arg(long)]
    pub model_cfg: Option<PathBuf>,
    /// JSON training configuration; omitted fields take defaults.
    #[arg(long)]
    pub train_cfg: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Records file, or a directory holding `eval.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub base: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub base: u32,
    /// Longest operand, in tokens, seen during training.
    #[arg(long)]
    pub max_trained_tokens: usize,
    /// Longest operand, in digits, of the training grid; the generated
    /// set starts one digit beyond it.
    #[arg(long, default_value_t = 10)]
    pub trained_digits: usize,
    #[arg(long, value_enum, default_value = "add")]
    pub op: OpArg,
    #[arg(long, default_value_t = 100)]
    pub samples_per_cell: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FreqArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub base: u32,
    #[arg(long, value_enum, default_value = "answer")]
    pub field: FieldArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// JSON grid description; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `grid`.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `N` or `A-B,C-D`.
pub fn parse_grid(s: &str) -> Result<LengthGrid, CliError> {
    let bad = || CliError::Usage(format!("invalid --grid {s:?}: expected N or A-B,C-D"));
    let range = |r: &str| -> Result<(usize, usize), CliError> {
        let (a, b) = r.split_once('-').ok_or_else(bad)?;
        Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
    };
    let grid = match s.split_once(',') {
        None => LengthGrid::square(s.trim().parse().map_err(|_| bad())?),
        Some((a, b)) => LengthGrid::new(range(a)?, range(b)?),
    };
    grid.map_err(|e| CliError::Usage(format!("invalid --grid {s:?}: {e}")))
}

fn system(base: u32) -> Result<NumeralSystem, CliError> {
    NumeralSystem::from_base(base).map_err(|e| CliError::Usage(e.to_string()))
}

fn read_config<T: for<'de> serde::Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::InvalidInput(format!("{}: {e}", p.display())))
        }
    }
}

fn data_file(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    atomic_write(path, text.as_bytes()).map_err(io_err(path))
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn gen(a: &GenArgs) -> Result<String, CliError> {
    let grid = parse_grid(&a.grid)?;
    if !(1..=30).contains(&a.scale) {
        return Err(CliError::Usage(format!("--scale {} outside 1..=30", a.scale)));
    }
    if a.eval_per_cell == 0 || a.train_subsample_per_cell == 0 {
        return Err(CliError::Usage("per-cell counts must be positive".into()));
    }
    let op = a.op.into();
    let eval = generate_eval(op, a.eval_per_cell, grid, a.seed)?;
    let train = generate_train(op, 1usize << a.scale, grid, &eval, a.seed)?;
    let sub = subsample_per_cell(&train, a.train_subsample_per_cell, a.seed);
    write_dataset(&eval, &a.out.join("eval.jsonl"))?;
    write_dataset(&train, &a.out.join("train.jsonl"))?;
    write_dataset(&sub, &a.out.join("train_subsample.jsonl"))?;
    Ok(format!("wrote {} train, {} eval, {} train-subsample pairs to {}", train.len(), eval.len(), sub.len(), a.out.display()))
}

fn train(a: &TrainArgs) -> Result<String, CliError> {
    let sys = system(a.base)?;
    let vocab = Vocabulary::new(sys);
    let mut model_cfg: ModelConfig = read_config(a.model_cfg.as_deref())?;
    if model_cfg.vocab_size == 0 {
        model_cfg = model_cfg.with_vocab(&vocab);
    }
    model_cfg.validate()?;
    model_cfg.check_vocab(&vocab)?;
    let train_cfg = TrainConfig { seed: a.seed, ..read_config(a.train_cfg.as_deref())? };
    train_cfg.validate()?;
    let ds = read_dataset(&data_file(&a.data, "train.jsonl"))?;
    let encoded: Vec<_> = ds.samples.iter().map(|s| encode_sample(&s.a, &s.b, s.op, &vocab)).collect();
    let mut params = TransformerParams::<f32>::init(model_cfg, a.seed)?;
    let outcome = train_encoded(&mut params, &encoded, vocab.pad(), &train_cfg, |step, loss| {
        if step % 50 == 0 {
            log::info!("step {step}: loss {loss:.5}");
        }
    })?;
    save_checkpoint(&params, Some(sys), &a.out.join("model.ckpt"))?;
    write_text(&a.out.join("loss.csv"), &outcome.loss_curve.to_csv())?;
    write_json(&a.out.join("train_config.json"), &train_cfg)?;
    Ok(format!(
        "trained {} steps, final loss {:.5}, checkpoint {}",
        outcome.steps,
        outcome.loss_curve.last().unwrap_or(f64::NAN),
        a.out.join("model.ckpt").display()
    ))
}

fn eval(a: &EvalArgs) -> Result<String, CliError> {
    let vocab = Vocabulary::new(system(a.base)?);
    let ckpt = load_checkpoint_for(&a.ckpt, &vocab)?;
    let ds = read_dataset(&data_file(&a.data, "eval.jsonl"))?;
    let (report, outputs) = evaluate(&ckpt.params, &ds, &vocab, ds.grid(), CellKey::Ordered)?;
    report.write(&a.out)?;
    let mut lines = String::new();
    for (s, out) in ds.samples.iter().zip(&outputs) {
        let rec = serde_json::json!({ "a": s.a, "b": s.b, "op": s.op, "answer": s.answer, "output": vocab.describe(out) });
        lines.push_str(&rec.to_string());
        lines.push('\n');
    }
    write_text(&a.out.join("predictions.jsonl"), &lines)?;
    Ok(format!("exact match {:.6} over {} samples, ned {:.6}", report.summary.exact_match, report.summary.samples, report.summary.ned))
}

fn extrapolate(a: &ExtrapolateArgs) -> Result<String, CliError> {
    let sys = system(a.base)?;
    let vocab = Vocabulary::new(sys);
    if a.max_trained_tokens == 0 || a.trained_digits == 0 || a.samples_per_cell == 0 {
        return Err(CliError::Usage("--max-trained-tokens, --trained-digits and --samples-per-cell must be positive".into()));
    }
    let layout = ExtrapolationLayout::beyond(a.trained_digits);
    layout.validate().map_err(|e| CliError::Usage(format!("--trained-digits {}: {e}", a.trained_digits)))?;
    let ckpt = load_checkpoint_for(&a.ckpt, &vocab)?;
    let op: Operation = a.op.into();
    let ds = generate_extrapolation(op, a.samples_per_cell, layout, a.seed)?;
    write_dataset(&ds, &a.out.join("extrapolation.jsonl"))?;
    let folded = layout.folded_grid();
    let (report, outputs) = evaluate(&ckpt.params, &ds, &vocab, folded, CellKey::LongShort)?;
    report.write(&a.out)?;
    let summary = match op {
        Operation::Add => {
            let cases = classify_dataset(&ds.samples, &outputs, &vocab, a.max_trained_tokens);
            let labels: Vec<_> = cases.iter().map(|c| ((c.la.max(c.lb), c.la.min(c.lb)), c.label.tag)).collect();
            let rep = pattern_report(&labels, folded);
            write_json(&a.out.join("patterns.json"), &rep.to_json())?;
            let path = a.out.join("cases.jsonl");
            write_cases(&cases, &path).map_err(io_err(&path))?;
            PatternTag::ALL.iter().map(|&t| format!("{} {}", t.as_str(), rep.aggregate.get(t))).collect::<Vec<_>>().join(", ")
        }
        Operation::Mul => {
            let stats = mul_edge_stats(&ds.samples, &outputs, &vocab, 1);
            write_json(&a.out.join("mul_edges.json"), &stats)?;
            format!("leading {:.4}, trailing {:.4}, length {:.4}", stats.leading, stats.trailing, stats.length)
        }
    };
    Ok(format!("{} samples, exact match {:.6}; {summary}", ds.len(), report.summary.exact_match))
}

fn freq(a: &FreqArgs) -> Result<String, CliError> {
    let sys = system(a.base)?;
    let ds = read_dataset(&data_file(&a.data, "train.jsonl"))?;
    let field = match a.field {
        FieldArg::Answer => FrequencyField::Answer,
        FieldArg::All => FrequencyField::All,
    };
    let hist = token_frequency(&ds, sys, field);
    let path = if a.out.extension().is_some() { a.out.clone() } else { a.out.join(format!("freq_base{}.csv", sys.base())) };
    write_text(&path, &hist.to_csv())?;
    Ok(format!("{} tokens over {} values written to {}", hist.total, hist.support().len(), path.display()))
}

fn grid(a: &GridArgs) -> Result<String, CliError> {
    let spec: GridSpec = read_config(a.config.as_deref())?;
    let configs = spec.expand()?;
    let outcome = run_grid(&configs, &a.out)?;
    Ok(format!("{} runs: {} trained, {} cached", outcome.records.len(), outcome.trained, outcome.cached))
}

fn report(a: &ReportArgs) -> Result<String, CliError> {
    let records = load_records(&a.runs)?;
    if records.is_empty() {
        return Err(CliError::InvalidInput(format!("no completed runs under {}", a.runs.display())));
    }
    let trend = trend_report(&records)?;
    write_text(&a.out.join("trend.csv"), &trend.rows_csv())?;
    write_text(&a.out.join("pairs.csv"), &trend.pairs_csv())?;
    write_json(&a.out.join("trend.json"), &trend)?;
    let mut patterns = String::from("config_hash,seed,base,train_scale,exact,truncated_add,truncated_add_carry,misaligned_truncated,other\n");
    for r in &records {
        let o = overfit_report(r, &a.runs)?;
        o.write(&a.out.join("overfit").join(format!("{}-seed-{}", r.config_hash, r.seed)))?;
        if let Some(p) = &r.patterns {
            patterns.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.config_hash,
                r.seed,
                r.system.base(),
                r.train_scale,
                p.exact,
                p.truncated_add,
                p.truncated_add_carry,
                p.misaligned_truncated,
                p.other
            ));
        }
    }
    write_text(&a.out.join("patterns.csv"), &patterns)?;
    Ok(format!("{} runs; base 10 dominates: {}", records.len(), trend.base10_dominates))
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Extrapolate(a) => extrapolate(a),
        Command::Freq(a) => freq(a),
        Command::Grid(a) => grid(a),
        Command::Report(a) => report(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_flag_forms() {
        assert_eq!(parse_grid("3").unwrap(), LengthGrid::square(3).unwrap());
        assert_eq!(parse_grid("11-15,1-5").unwrap(), LengthGrid::new((11, 15), (1, 5)).unwrap());
        assert!(matches!(parse_grid("0"), Err(CliError::Usage(_))));
        assert!(matches!(parse_grid("1-3"), Err(CliError::Usage(_))));
        assert!(matches!(parse_grid("a,b"), Err(CliError::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_with_usage_code() {
        assert_eq!(run(["numbase", "gen", "--op", "sub", "--scale", "3", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["numbase", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["numbase", "gen", "--op", "add", "--scale", "3", "--grid", "0", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["numbase", "--help"]), 0);
    }

    #[test]
    fn missing_and_corrupt_inputs_have_distinct_codes() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().display().to_string();
        let missing = format!("{d}/nope.jsonl");
        assert_eq!(run(["numbase", "freq", "--data", &missing, "--base", "10", "--out", &d]), EXIT_IO);
        let ckpt = format!("{d}/bad.ckpt");
        std::fs::write(&ckpt, b"not a checkpoint").unwrap();
        assert_eq!(run(["numbase", "eval", "--ckpt", &ckpt, "--data", &d, "--base", "10", "--out", &d]), EXIT_CORRUPT_CHECKPOINT);
        assert_eq!(run(["numbase", "train", "--data", &d, "--base", "7", "--out", &d]), EXIT_USAGE);
    }
}

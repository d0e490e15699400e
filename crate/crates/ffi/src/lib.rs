//! C interface to numbase.
//!
//! Every function returns an [`NbStatus`]. On failure a message is
//! available from [`nb_last_error`] on the calling thread. Strings are
//! NUL-terminated UTF-8. Output buffers take a capacity and report the
//! required length through `out_len` even when they are too small.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use numbase::analysis::{classify_addition, truncate, PatternTag};
use numbase::datagen::Sample;
use numbase::metrics::{edit_distance, ned, rel_err_conv, rel_err_log};
use numbase::model::{decode_batch, load_checkpoint_for, ModelError, TransformerParams};
use numbase::numeral::{
    decode_answer, encode_prompt, from_groups, to_groups, token_length, Decoded, Number, NumeralSystem, Operation,
    Vocabulary,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    /// The quantity has no value for these inputs, e.g. an invalid decode.
    Undefined = 4,
    Io = 5,
    Corrupt = 6,
    Model = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbPattern {
    Exact = 0,
    TruncatedAdd = 1,
    TruncatedAddCarry = 2,
    MisalignedTruncated = 3,
    Other = 4,
}

impl From<PatternTag> for NbPattern {
    fn from(t: PatternTag) -> Self {
        match t {
            PatternTag::Exact => Self::Exact,
            PatternTag::TruncatedAdd => Self::TruncatedAdd,
            PatternTag::TruncatedAddCarry => Self::TruncatedAddCarry,
            PatternTag::MisalignedTruncated => Self::MisalignedTruncated,
            PatternTag::Other => Self::Other,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbOperation {
    Add = 0,
    Mul = 1,
}

/// A loaded checkpoint and its vocabulary.
pub struct NbModel {
    params: TransformerParams<f32>,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(NbStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: NbStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> NbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            NbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            NbStatus::Panic
        }
    }
}

fn model_failure(e: ModelError) -> Failure {
    let status = match e {
        ModelError::Io { .. } => NbStatus::Io,
        ModelError::Corrupt { .. } => NbStatus::Corrupt,
        ModelError::VocabMismatch { .. } => NbStatus::InvalidArgument,
        _ => NbStatus::Model,
    };
    Failure(status, e.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(NbStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(NbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn number(p: *const c_char, what: &str) -> FfiResult<Number> {
    let s = text(p, what)?;
    Number::parse_decimal(s).or_else(|e| fail(NbStatus::InvalidArgument, format!("{what}: {e}")))
}

/// A null pointer reads as an invalid decode.
unsafe fn decoded(p: *const c_char, what: &str) -> FfiResult<Decoded> {
    if p.is_null() {
        return Ok(Decoded::Invalid);
    }
    Ok(Number::parse_decimal(text(p, what)?).map(Decoded::Valid).unwrap_or(Decoded::Invalid))
}

fn system(base: u32) -> FfiResult<NumeralSystem> {
    NumeralSystem::from_base(base).or_else(|e| fail(NbStatus::InvalidArgument, e.to_string()))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().map_or_else(|| fail(NbStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn write_str(s: &str, out: *mut c_char, cap: usize, out_len: *mut usize) -> FfiResult<()> {
    if let Some(l) = out_len.as_mut() {
        *l = s.len();
    }
    if out.is_null() {
        return fail(NbStatus::NullPointer, "output buffer is null");
    }
    if cap < s.len() + 1 {
        return fail(NbStatus::BufferTooSmall, format!("need {} bytes, have {cap}", s.len() + 1));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), out.cast::<u8>(), s.len());
    *out.add(s.len()) = 0;
    Ok(())
}

unsafe fn write_u32s(v: &[u32], out: *mut u32, cap: usize, out_len: *mut usize) -> FfiResult<()> {
    if let Some(l) = out_len.as_mut() {
        *l = v.len();
    }
    if out.is_null() {
        return fail(NbStatus::NullPointer, "output buffer is null");
    }
    if cap < v.len() {
        return fail(NbStatus::BufferTooSmall, format!("need {} entries, have {cap}", v.len()));
    }
    std::ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    Ok(())
}

/// Message for the most recent failure on this thread; empty after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn nb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Most-significant-first digit groups of a decimal integer.
///
/// # Safety
/// `decimal` must be a valid C string; `out` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn nb_encode(
    base: u32,
    decimal: *const c_char,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> NbStatus {
    guard(|| {
        let sys = system(base)?;
        let n = number(decimal, "decimal")?;
        write_u32s(&to_groups(&n, sys).0, out, cap, out_len)
    })
}

/// Decimal rendering of a group sequence.
///
/// # Safety
/// `groups` must hold `len` entries; `out` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn nb_decode(
    base: u32,
    groups: *const u32,
    len: usize,
    out: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> NbStatus {
    guard(|| {
        let sys = system(base)?;
        if groups.is_null() {
            return fail(NbStatus::NullPointer, "groups is null");
        }
        let g = std::slice::from_raw_parts(groups, len);
        let n = from_groups(g, sys).or_else(|e| fail(NbStatus::InvalidArgument, e.to_string()))?;
        write_str(&n.to_decimal(), out, cap, out_len)
    })
}

/// Number of base-`base` tokens in a decimal integer.
///
/// # Safety
/// `decimal` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nb_token_length(base: u32, decimal: *const c_char, out: *mut usize) -> NbStatus {
    guard(|| {
        let sys = system(base)?;
        let n = number(decimal, "decimal")?;
        *out_ref(out, "out")? = token_length(&n, sys);
        Ok(())
    })
}

/// Levenshtein distance between two strings, unit costs.
///
/// # Safety
/// `a` and `b` must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nb_edit_distance(a: *const c_char, b: *const c_char, out: *mut usize) -> NbStatus {
    guard(|| {
        let (a, b) = (text(a, "a")?, text(b, "b")?);
        *out_ref(out, "out")? = edit_distance(a, b);
        Ok(())
    })
}

/// Normalized edit similarity in [0, 1].
///
/// # Safety
/// `a` and `b` must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nb_ned(a: *const c_char, b: *const c_char, out: *mut f64) -> NbStatus {
    guard(|| {
        let (a, b) = (text(a, "a")?, text(b, "b")?);
        *out_ref(out, "out")? = ned(a, b);
        Ok(())
    })
}

/// `|log10(output / gold)|`. A null or non-numeric `output` is an invalid
/// decode and yields `Undefined`, as does a zero on either side.
///
/// # Safety
/// `gold` must be a valid C string, `output` null or a valid C string.
#[no_mangle]
pub unsafe extern "C" fn nb_rel_err_log(output: *const c_char, gold: *const c_char, out: *mut f64) -> NbStatus {
    guard(|| {
        let (o, g) = (decoded(output, "output")?, number(gold, "gold")?);
        let target = out_ref(out, "out")?;
        match rel_err_log(&o, &g) {
            Some(v) => {
                *target = v;
                Ok(())
            }
            None => fail(NbStatus::Undefined, "log-ratio error undefined for this pair"),
        }
    })
}

/// `|output - gold| / gold`.
///
/// # Safety
/// As for [`nb_rel_err_log`].
#[no_mangle]
pub unsafe extern "C" fn nb_rel_err_conv(output: *const c_char, gold: *const c_char, out: *mut f64) -> NbStatus {
    guard(|| {
        let (o, g) = (decoded(output, "output")?, number(gold, "gold")?);
        let target = out_ref(out, "out")?;
        match rel_err_conv(&o, &g) {
            Some(v) => {
                *target = v;
                Ok(())
            }
            None => fail(NbStatus::Undefined, "relative error undefined for this pair"),
        }
    })
}

/// Keeps the leading `max_tokens` groups of a decimal integer.
///
/// # Safety
/// `decimal` must be a valid C string; `out` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn nb_truncate(
    base: u32,
    decimal: *const c_char,
    max_tokens: usize,
    out: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> NbStatus {
    guard(|| {
        let sys = system(base)?;
        if max_tokens == 0 {
            return fail(NbStatus::InvalidArgument, "max_tokens must be positive");
        }
        let n = number(decimal, "decimal")?;
        write_str(&truncate(&n, sys, max_tokens).to_decimal(), out, cap, out_len)
    })
}

/// Labels a model's answer to `a + b` against the extrapolation patterns.
/// A null `output` is an invalid decode.
///
/// # Safety
/// `a` and `b` must be valid C strings, `output` null or a valid C string,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nb_classify_addition(
    base: u32,
    a: *const c_char,
    b: *const c_char,
    output: *const c_char,
    max_trained_tokens: usize,
    out: *mut NbPattern,
) -> NbStatus {
    guard(|| {
        let sys = system(base)?;
        if max_trained_tokens == 0 {
            return fail(NbStatus::InvalidArgument, "max_trained_tokens must be positive");
        }
        let sample = Sample::new(number(a, "a")?, number(b, "b")?, Operation::Add);
        let o = decoded(output, "output")?;
        *out_ref(out, "out")? = classify_addition(&sample, &o, sys, max_trained_tokens).tag.into();
        Ok(())
    })
}

/// Loads a checkpoint trained under base `base`.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable. Release the
/// handle with [`nb_model_free`].
#[no_mangle]
pub unsafe extern "C" fn nb_model_load(path: *const c_char, base: u32, out: *mut *mut NbModel) -> NbStatus {
    guard(|| {
        let target = out_ref(out, "out")?;
        *target = std::ptr::null_mut();
        let vocab = Vocabulary::new(system(base)?);
        let path = text(path, "path")?;
        let ckpt = load_checkpoint_for(Path::new(path), &vocab).map_err(model_failure)?;
        *target = Box::into_raw(Box::new(NbModel { params: ckpt.params, vocab }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`nb_model_load`] and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn nb_model_free(model: *mut NbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size of a model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nb_model_vocab_size(model: *const NbModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.config.vocab_size)
}

/// Context length of a model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nb_model_context_length(model: *const NbModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.config.context_length)
}

/// Greedy continuation of `prompt`, stopping after EOS or `max_new` tokens.
///
/// # Safety
/// `model` must be a live handle, `prompt` must hold `len` entries and
/// `out` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn nb_model_greedy_decode(
    model: *const NbModel,
    prompt: *const u32,
    len: usize,
    max_new: usize,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> NbStatus {
    guard(|| {
        let m = model.as_ref().map_or_else(|| fail(NbStatus::NullPointer, "model is null"), Ok)?;
        if prompt.is_null() {
            return fail(NbStatus::NullPointer, "prompt is null");
        }
        let p = std::slice::from_raw_parts(prompt, len).to_vec();
        let outputs = decode_batch(&m.params, &[p], max_new, m.vocab.eos()).map_err(model_failure)?;
        write_u32s(&outputs[0], out, cap, out_len)
    })
}

/// Asks the model for `a op b` and writes its answer in decimal. An output
/// that does not read as a number yields `Undefined`.
///
/// # Safety
/// `model` must be a live handle, `a` and `b` valid C strings, `out` must
/// hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn nb_model_solve(
    model: *const NbModel,
    a: *const c_char,
    b: *const c_char,
    op: NbOperation,
    out: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> NbStatus {
    guard(|| {
        let m = model.as_ref().map_or_else(|| fail(NbStatus::NullPointer, "model is null"), Ok)?;
        let (a, b) = (number(a, "a")?, number(b, "b")?);
        let op = match op {
            NbOperation::Add => Operation::Add,
            NbOperation::Mul => Operation::Mul,
        };
        let prompt = encode_prompt(&a, &b, op, &m.vocab);
        let room = m.params.config.context_length.saturating_sub(prompt.len());
        let (ta, tb) = (token_length(&a, m.vocab.system), token_length(&b, m.vocab.system));
        let longest_answer = match op {
            Operation::Add => ta.max(tb) + 1,
            Operation::Mul => ta + tb,
        };
        let answer_bound = longest_answer + 2;
        let outputs = decode_batch(&m.params, &[prompt], answer_bound.min(room), m.vocab.eos()).map_err(model_failure)?;
        match decode_answer(&outputs[0], &m.vocab) {
            Decoded::Valid(n) => write_str(&n.to_decimal(), out, cap, out_len),
            Decoded::Invalid => fail(NbStatus::Undefined, format!("model output {} is not a number", m.vocab.describe(&outputs[0]))),
        }
    })
}

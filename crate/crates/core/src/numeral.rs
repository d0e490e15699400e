//! Exact integers, base-B digit groups and the token vocabulary built on them.
//!
//! A [`NumeralSystem`] fixes how many decimal digits share one token. Grouping
//! is right-aligned: the least-significant group always holds exactly
//! `group_width` decimal digits and only the leading group may be shorter.
//! Token ids are the group values themselves, with the five special tokens
//! appended after `base - 1`.

use std::fmt;
use std::ops::{Add, Mul};
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumeralError {
    #[error("unsupported base {0}; expected 10, 100 or 1000")]
    UnsupportedBase(u32),
    #[error("group {value} at index {index} is out of range for base {base}")]
    InvalidGroup { index: usize, value: u32, base: u32 },
    #[error("invalid decimal literal {0:?}")]
    Parse(String),
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
}

/// One of the three positional systems under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum NumeralSystem {
    Base10,
    Base100,
    Base1000,
}

impl NumeralSystem {
    pub const ALL: [NumeralSystem; 3] = [Self::Base10, Self::Base100, Self::Base1000];

    pub fn base(self) -> u32 {
        match self {
            Self::Base10 => 10,
            Self::Base100 => 100,
            Self::Base1000 => 1000,
        }
    }

    /// Decimal digits per token.
    pub fn group_width(self) -> usize {
        match self {
            Self::Base10 => 1,
            Self::Base100 => 2,
            Self::Base1000 => 3,
        }
    }

    pub fn from_base(base: u32) -> Result<Self, NumeralError> {
        match base {
            10 => Ok(Self::Base10),
            100 => Ok(Self::Base100),
            1000 => Ok(Self::Base1000),
            other => Err(NumeralError::UnsupportedBase(other)),
        }
    }

    /// Tokens needed for an integer with `digits` decimal digits.
    pub fn tokens_for_digits(self, digits: usize) -> usize {
        digits.div_ceil(self.group_width())
    }
}

impl TryFrom<u32> for NumeralSystem {
    type Error = NumeralError;

    fn try_from(base: u32) -> Result<Self, Self::Error> {
        Self::from_base(base)
    }
}

impl From<NumeralSystem> for u32 {
    fn from(sys: NumeralSystem) -> u32 {
        sys.base()
    }
}

impl fmt::Display for NumeralSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "base{}", self.base())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Add,
    Mul,
}

impl Operation {
    pub fn apply(self, a: &Number, b: &Number) -> Number {
        match self {
            Self::Add => a + b,
            Self::Mul => a * b,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Mul => "mul",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = NumeralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "add" => Ok(Self::Add),
            "mul" => Ok(Self::Mul),
            other => Err(NumeralError::UnknownOperation(other.to_string())),
        }
    }
}

/// Arbitrary-precision non-negative integer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Number(BigUint);

impl Number {
    pub fn zero() -> Self {
        Self(BigUint::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn pow10(exp: u32) -> Self {
        Self(BigUint::from(10u32).pow(exp))
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }

    pub fn to_u128(&self) -> Option<u128> {
        self.0.to_u128()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::INFINITY)
    }

    /// Canonical decimal rendering (no leading zeros).
    pub fn to_decimal(&self) -> String {
        self.0.to_str_radix(10)
    }

    pub fn parse_decimal(s: &str) -> Result<Self, NumeralError> {
        let bytes = s.as_bytes();
        let canonical = !bytes.is_empty()
            && bytes.iter().all(u8::is_ascii_digit)
            && (bytes.len() == 1 || bytes[0] != b'0');
        if !canonical {
            return Err(NumeralError::Parse(s.to_string()));
        }
        BigUint::parse_bytes(bytes, 10)
            .map(Self)
            .ok_or_else(|| NumeralError::Parse(s.to_string()))
    }

    pub fn abs_diff(&self, other: &Number) -> Number {
        if self >= other {
            Self(&self.0 - &other.0)
        } else {
            Self(&other.0 - &self.0)
        }
    }
}

impl From<u64> for Number {
    fn from(v: u64) -> Self {
        Self(BigUint::from(v))
    }
}

impl From<u128> for Number {
    fn from(v: u128) -> Self {
        Self(BigUint::from(v))
    }
}

impl From<u32> for Number {
    fn from(v: u32) -> Self {
        Self(BigUint::from(v))
    }
}

impl From<BigUint> for Number {
    fn from(v: BigUint) -> Self {
        Self(v)
    }
}

impl FromStr for Number {
    type Err = NumeralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_decimal(s)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// Decimal strings on the wire, so values past 2^64 survive JSON.
impl Serialize for Number {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_decimal())
    }
}

impl<'de> Deserialize<'de> for Number {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Number::parse_decimal(&s).map_err(serde::de::Error::custom)
    }
}

impl Add for &Number {
    type Output = Number;

    fn add(self, rhs: &Number) -> Number {
        Number(&self.0 + &rhs.0)
    }
}

impl Mul for &Number {
    type Output = Number;

    fn mul(self, rhs: &Number) -> Number {
        Number(&self.0 * &rhs.0)
    }
}

impl Add<u32> for &Number {
    type Output = Number;

    fn add(self, rhs: u32) -> Number {
        Number(&self.0 + rhs)
    }
}

/// Base-B digits, most-significant group first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupSequence(pub Vec<u32>);

impl GroupSequence {
    pub fn groups(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn to_groups(n: &Number, sys: NumeralSystem) -> GroupSequence {
    let digits = n.to_decimal();
    let width = sys.group_width();
    let head = match digits.len() % width {
        0 => width,
        r => r,
    };
    let mut groups = Vec::with_capacity(digits.len().div_ceil(width));
    groups.push(group_value(&digits[..head]));
    groups.extend((head..digits.len()).step_by(width).map(|i| group_value(&digits[i..i + width])));
    GroupSequence(groups)
}

fn group_value(digits: &str) -> u32 {
    digits.bytes().fold(0u32, |acc, d| acc * 10 + u32::from(d - b'0'))
}

pub fn from_groups(groups: &[u32], sys: NumeralSystem) -> Result<Number, NumeralError> {
    let base = sys.base();
    let mut acc = BigUint::zero();
    for (index, &value) in groups.iter().enumerate() {
        if value >= base {
            return Err(NumeralError::InvalidGroup { index, value, base });
        }
        acc = acc * base + value;
    }
    Ok(Number(acc))
}

pub fn digit_length(n: &Number) -> usize {
    if n.is_zero() {
        1
    } else {
        n.to_decimal().len()
    }
}

pub fn token_length(n: &Number, sys: NumeralSystem) -> usize {
    sys.tokens_for_digits(digit_length(n))
}

/// Renders groups as a decimal digit string: the first group unpadded, the
/// rest zero-padded to the group width. Leading zero groups are kept.
pub fn render_groups(groups: &[u32], sys: NumeralSystem) -> String {
    let width = sys.group_width();
    let mut out = String::with_capacity(groups.len() * width);
    for (i, g) in groups.iter().enumerate() {
        if i == 0 {
            out.push_str(&g.to_string());
        } else {
            out.push_str(&format!("{g:0width$}"));
        }
    }
    out
}

pub type TokenId = u32;

/// Digit-group ids `0..base` followed by the special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    pub system: NumeralSystem,
}

impl Vocabulary {
    pub const SPECIAL_COUNT: usize = 5;

    pub fn new(system: NumeralSystem) -> Self {
        Self { system }
    }

    pub fn base(&self) -> u32 {
        self.system.base()
    }

    pub fn plus(&self) -> TokenId {
        self.base()
    }

    pub fn times(&self) -> TokenId {
        self.base() + 1
    }

    pub fn equals(&self) -> TokenId {
        self.base() + 2
    }

    pub fn eos(&self) -> TokenId {
        self.base() + 3
    }

    pub fn pad(&self) -> TokenId {
        self.base() + 4
    }

    pub fn size(&self) -> usize {
        self.base() as usize + Self::SPECIAL_COUNT
    }

    pub fn is_digit(&self, id: TokenId) -> bool {
        id < self.base()
    }

    pub fn op_token(&self, op: Operation) -> TokenId {
        match op {
            Operation::Add => self.plus(),
            Operation::Mul => self.times(),
        }
    }

    /// Human-readable rendering for logs and case exports.
    pub fn describe(&self, ids: &[TokenId]) -> String {
        let parts: Vec<String> = ids
            .iter()
            .map(|&id| match id {
                d if self.is_digit(d) => d.to_string(),
                s if s == self.plus() => "+".into(),
                s if s == self.times() => "*".into(),
                s if s == self.equals() => "=".into(),
                s if s == self.eos() => "<eos>".into(),
                s if s == self.pad() => "<pad>".into(),
                other => format!("<?{other}>"),
            })
            .collect();
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    /// `a <op> b =`
    pub prompt: Vec<TokenId>,
    /// `c <eos>`
    pub answer: Vec<TokenId>,
}

impl EncodedSample {
    pub fn len(&self) -> usize {
        self.prompt.len() + self.answer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn full(&self) -> Vec<TokenId> {
        let mut seq = Vec::with_capacity(self.len());
        seq.extend_from_slice(&self.prompt);
        seq.extend_from_slice(&self.answer);
        seq
    }
}

pub fn encode_prompt(a: &Number, b: &Number, op: Operation, vocab: &Vocabulary) -> Vec<TokenId> {
    let sys = vocab.system;
    let mut prompt = to_groups(a, sys).0;
    prompt.push(vocab.op_token(op));
    prompt.extend(to_groups(b, sys).0);
    prompt.push(vocab.equals());
    prompt
}

pub fn encode_answer(c: &Number, vocab: &Vocabulary) -> Vec<TokenId> {
    let mut answer = to_groups(c, vocab.system).0;
    answer.push(vocab.eos());
    answer
}

pub fn encode_sample(a: &Number, b: &Number, op: Operation, vocab: &Vocabulary) -> EncodedSample {
    EncodedSample {
        prompt: encode_prompt(a, b, op, vocab),
        answer: encode_answer(&op.apply(a, b), vocab),
    }
}

/// Result of reading a generated answer back into a number.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Decoded {
    Valid(Number),
    Invalid,
}

impl Decoded {
    pub fn value(&self) -> Option<&Number> {
        match self {
            Self::Valid(n) => Some(n),
            Self::Invalid => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Self::Valid(_))
    }
}

/// Tokens before the first EOS (or the whole sequence when there is none).
pub fn answer_span<'a>(tokens: &'a [TokenId], vocab: &Vocabulary) -> &'a [TokenId] {
    let end = tokens.iter().position(|&t| t == vocab.eos()).unwrap_or(tokens.len());
    &tokens[..end]
}

pub fn decode_answer(tokens: &[TokenId], vocab: &Vocabulary) -> Decoded {
    let span = answer_span(tokens, vocab);
    if span.is_empty() || !span.iter().all(|&t| vocab.is_digit(t)) {
        return Decoded::Invalid;
    }
    match from_groups(span, vocab.system) {
        Ok(n) => Decoded::Valid(n),
        Err(_) => Decoded::Invalid,
    }
}

/// Digit-string rendering of the digit tokens before EOS, skipping specials.
pub fn raw_digit_rendering(tokens: &[TokenId], vocab: &Vocabulary) -> String {
    let digits: Vec<u32> = answer_span(tokens, vocab)
        .iter()
        .copied()
        .filter(|&t| vocab.is_digit(t))
        .collect();
    render_groups(&digits, vocab.system)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: u128) -> Number {
        Number::from(v)
    }

    #[test]
    fn to_groups_examples() {
        assert_eq!(to_groups(&n(0), NumeralSystem::Base1000).0, vec![0]);
        assert_eq!(
            to_groups(&n(31415926535), NumeralSystem::Base1000).0,
            vec![31, 415, 926, 535]
        );
        assert_eq!(
            to_groups(&n(73476644303), NumeralSystem::Base100).0,
            vec![7, 34, 76, 64, 43, 3]
        );
        assert_eq!(to_groups(&n(1000), NumeralSystem::Base10).0, vec![1, 0, 0, 0]);
    }

    #[test]
    fn from_groups_examples() {
        assert_eq!(from_groups(&[0], NumeralSystem::Base10).unwrap(), n(0));
        assert_eq!(
            from_groups(&[31, 415, 926, 535], NumeralSystem::Base1000).unwrap(),
            n(31415926535)
        );
        assert_eq!(
            from_groups(&[7, 34, 76, 64, 43, 3], NumeralSystem::Base100).unwrap(),
            n(73476644303)
        );
        // leading zero groups contribute positionally
        assert_eq!(from_groups(&[0, 0, 7], NumeralSystem::Base10).unwrap(), n(7));
    }

    #[test]
    fn from_groups_rejects_out_of_range() {
        let err = from_groups(&[1, 100], NumeralSystem::Base100).unwrap_err();
        assert_eq!(err, NumeralError::InvalidGroup { index: 1, value: 100, base: 100 });
    }

    #[test]
    fn lengths() {
        assert_eq!(digit_length(&n(0)), 1);
        assert_eq!(digit_length(&n(8318686348)), 10);
        assert_eq!(digit_length(&n(999)), 3);
        assert_eq!(digit_length(&n(1000)), 4);
        for sys in NumeralSystem::ALL {
            assert_eq!(token_length(&n(9), sys), 1);
        }
        assert_eq!(token_length(&Number::pow10(13), NumeralSystem::Base1000), 5);
        assert_eq!(token_length(&n(31415926535), NumeralSystem::Base1000), 4);
    }

    #[test]
    fn vocabulary_layout() {
        for sys in NumeralSystem::ALL {
            let v = Vocabulary::new(sys);
            assert_eq!(v.size(), sys.base() as usize + 5);
            let specials = [v.plus(), v.times(), v.equals(), v.eos(), v.pad()];
            for (i, s) in specials.iter().enumerate() {
                assert_eq!(*s, sys.base() + i as u32);
                assert!(!v.is_digit(*s));
            }
            assert!(v.is_digit(sys.base() - 1));
        }
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::new(NumeralSystem::Base10);
        let (plus, eq, eos) = (v.plus(), v.equals(), v.eos());
        let e = encode_sample(&n(12), &n(23), Operation::Add, &v);
        assert_eq!(e.prompt, vec![1, 2, plus, 2, 3, eq]);
        assert_eq!(e.answer, vec![3, 5, eos]);

        let v100 = Vocabulary::new(NumeralSystem::Base100);
        let e = encode_sample(&n(0), &n(0), Operation::Add, &v100);
        assert_eq!(e.prompt, vec![0, v100.plus(), 0, v100.equals()]);
        assert_eq!(e.answer, vec![0, v100.eos()]);

        // 92985744447 * 6 = 557914466682 (checked with u128 arithmetic)
        assert_eq!(92985744447u128 * 6, 557914466682);
        let e = encode_sample(&n(92985744447), &n(6), Operation::Mul, &v);
        assert_eq!(e.prompt[11], v.times());
        assert_eq!(e.answer, vec![5, 5, 7, 9, 1, 4, 4, 6, 6, 6, 8, 2, eos]);
    }

    #[test]
    fn decode_examples() {
        let v = Vocabulary::new(NumeralSystem::Base10);
        assert_eq!(decode_answer(&[3, 5, v.eos()], &v), Decoded::Valid(n(35)));
        assert_eq!(decode_answer(&[v.eos()], &v), Decoded::Invalid);
        assert_eq!(decode_answer(&[], &v), Decoded::Invalid);
        assert_eq!(decode_answer(&[3, v.plus(), 5], &v), Decoded::Invalid);
        // tokens after EOS are ignored; missing EOS reads to the end
        assert_eq!(decode_answer(&[4, v.eos(), v.plus()], &v), Decoded::Valid(n(4)));
        assert_eq!(decode_answer(&[4, 2], &v), Decoded::Valid(n(42)));

        let v100 = Vocabulary::new(NumeralSystem::Base100);
        assert_eq!(
            decode_answer(&[7, 34, 76, 64, 46, v100.eos()], &v100),
            Decoded::Valid(n(734766446))
        );
    }

    #[test]
    fn rendering_pads_inner_groups() {
        assert_eq!(render_groups(&[7, 34, 76, 64, 43, 3], NumeralSystem::Base100), "73476644303");
        assert_eq!(render_groups(&[2, 929, 747, 175, 22], NumeralSystem::Base1000), "2929747175022");
        let v = Vocabulary::new(NumeralSystem::Base100);
        assert_eq!(raw_digit_rendering(&[5, v.plus(), 7, v.eos(), 9], &v), "507");
        assert_eq!(raw_digit_rendering(&[v.eos()], &v), "");
    }

    #[test]
    fn parse_decimal_is_canonical() {
        assert_eq!("0".parse::<Number>().unwrap(), n(0));
        assert_eq!("35".parse::<Number>().unwrap(), n(35));
        assert!("035".parse::<Number>().is_err());
        assert!("".parse::<Number>().is_err());
        assert!("-3".parse::<Number>().is_err());
        assert!("1e3".parse::<Number>().is_err());
    }

    #[test]
    fn system_from_base() {
        assert_eq!(NumeralSystem::from_base(100).unwrap(), NumeralSystem::Base100);
        assert!(NumeralSystem::from_base(16).is_err());
        let json = serde_json::to_string(&NumeralSystem::Base1000).unwrap();
        assert_eq!(json, "1000");
        assert!(serde_json::from_str::<NumeralSystem>("7").is_err());
    }
}

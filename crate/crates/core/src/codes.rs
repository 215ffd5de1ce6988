//! Code representations shared by every other module.
//!
//! Encoder outputs live in `[-1, 1]^m` ([`ContinuousCode`]); stored hashes are
//! ternary strings over `{-1, 0, +1}` ([`TernaryCode`]) so that inactive
//! positions survive quantization.
//!
//! # Packed layout
//!
//! A ternary code packs into 2 bits per symbol: `00` = 0, `01` = +1,
//! `10` = -1 (`11` is invalid). Symbol `i` occupies bits `2*(i % 4)` and
//! `2*(i % 4) + 1` of byte `i / 4`, so bytes are filled little-endian. Reading
//! the byte stream as little-endian `u64` words gives 32 symbols per word,
//! which is the form the distance kernel consumes. Unused trailing bits are
//! zero.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Symbols carried by one packed `u64` word.
pub const SYMBOLS_PER_WORD: usize = 32;

const LOW_BITS: u64 = 0x5555_5555_5555_5555;

/// Real-valued encoder output, entries in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousCode(Vec<f64>);

impl ContinuousCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("continuous code"));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "continuous code entry {v} outside [-1, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A hash code over `{-1, 0, +1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TernaryCode(Vec<i8>);

impl TernaryCode {
    pub fn new(symbols: Vec<i8>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::EmptyInput("ternary code"));
        }
        if let Some(s) = symbols.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(Error::InvalidArgument(format!("invalid ternary symbol {s}")));
        }
        Ok(Self(symbols))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0; m])
    }

    pub fn symbols(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nonzeros(&self) -> usize {
        self.0.iter().filter(|&&s| s != 0).count()
    }

    /// Number of packed `u64` words for a code of length `m`.
    pub fn words_for(m: usize) -> usize {
        m.div_ceil(SYMBOLS_PER_WORD)
    }

    /// Packs into little-endian `u64` words (see module docs).
    pub fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; Self::words_for(self.len())];
        self.pack_into(&mut words);
        words
    }

    pub(crate) fn pack_into(&self, words: &mut [u64]) {
        words.iter_mut().for_each(|w| *w = 0);
        for (i, &s) in self.0.iter().enumerate() {
            words[i / SYMBOLS_PER_WORD] |= symbol_bits(s) << (2 * (i % SYMBOLS_PER_WORD));
        }
    }

    pub fn from_words(words: &[u64], m: usize) -> Result<Self> {
        check_len(Self::words_for(m), words.len())?;
        let symbols = (0..m)
            .map(|i| bits_symbol((words[i / SYMBOLS_PER_WORD] >> (2 * (i % SYMBOLS_PER_WORD))) & 3))
            .collect::<Result<Vec<_>>>()?;
        if m % SYMBOLS_PER_WORD != 0 {
            let tail = words[words.len() - 1] >> (2 * (m % SYMBOLS_PER_WORD));
            if tail != 0 {
                return Err(Error::Format("nonzero padding bits in packed code".into()));
            }
        }
        Self::new(symbols)
    }

    /// Packed byte form, `ceil(m / 4)` bytes.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.len().div_ceil(4)];
        for (i, &s) in self.0.iter().enumerate() {
            bytes[i / 4] |= (symbol_bits(s) as u8) << (2 * (i % 4));
        }
        bytes
    }

    pub fn from_packed_bytes(bytes: &[u8], m: usize) -> Result<Self> {
        check_len(m.div_ceil(4), bytes.len())?;
        let mut words = vec![0u64; Self::words_for(m)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        Self::from_words(&words, m)
    }
}

#[inline]
fn symbol_bits(s: i8) -> u64 {
    match s {
        1 => 0b01,
        -1 => 0b10,
        _ => 0b00,
    }
}

fn bits_symbol(bits: u64) -> Result<i8> {
    match bits {
        0b00 => Ok(0),
        0b01 => Ok(1),
        0b10 => Ok(-1),
        _ => Err(Error::Format("invalid 2-bit symbol 0b11".into())),
    }
}

impl fmt::Display for TernaryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            let c = match s {
                1 => '+',
                -1 => '-',
                _ => '0',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for TernaryCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let symbols = s
            .trim()
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                '0' => Ok(0),
                other => Err(Error::Format(format!("invalid code character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(symbols)
    }
}

/// Positionwise mismatch count.
///
/// On zero-free codes this is the usual Hamming distance `m/2 - <a, b>/2`.
pub fn hamming_distance(a: &TernaryCode, b: &TernaryCode) -> Result<u32> {
    check_len(a.len(), b.len())?;
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count() as u32)
}

/// Mismatch count between two packed codes of equal word length.
#[inline]
pub fn packed_distance(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x ^ y;
            ((d | (d >> 1)) & LOW_BITS).count_ones()
        })
        .sum()
}

/// `sign(z_i)` where `|z_i| > threshold`, zero otherwise.
pub fn quantize(z: &[f64], threshold: f64) -> Result<TernaryCode> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "quantization threshold must be nonnegative, got {threshold}"
        )));
    }
    let symbols = z
        .iter()
        .map(|&v| {
            if v.abs() > threshold {
                if v > 0.0 {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect();
    TernaryCode::new(symbols)
}

/// Fraction of nonzero symbols.
pub fn sparsity(code: &TernaryCode) -> f64 {
    code.nonzeros() as f64 / code.len() as f64
}

/// Collision statistics of a code database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub unique_code_count: usize,
    /// Radius to mean number of database codes within that radius of a
    /// database code (the code itself included).
    pub avg_neighbors_at_r: BTreeMap<u32, f64>,
}

/// Unique-code count and average neighborhood sizes of `db` against itself.
pub fn code_stats(db: &[TernaryCode], radii: &[u32]) -> Result<CodeStats> {
    let first = db.first().ok_or(Error::EmptyInput("code database"))?;
    let m = first.len();
    let mut groups: FxHashMap<Vec<u64>, u64> = FxHashMap::default();
    let mut order = Vec::new();
    for c in db {
        check_len(m, c.len())?;
        let words = c.to_words();
        let count = groups.entry(words.clone()).or_insert_with(|| {
            order.push(words);
            0
        });
        *count += 1;
    }
    let counts: Vec<u64> = order.iter().map(|w| groups[w]).collect();

    // Pairs are counted over distinct codes weighted by multiplicity.
    let mut within = vec![0u64; radii.len()];
    for (i, a) in order.iter().enumerate() {
        for (j, b) in order.iter().enumerate() {
            let d = packed_distance(a, b);
            let weight = counts[i] * counts[j];
            for (slot, &r) in within.iter_mut().zip(radii) {
                if d <= r {
                    *slot += weight;
                }
            }
        }
    }
    let n = db.len() as f64;
    Ok(CodeStats {
        unique_code_count: order.len(),
        avg_neighbors_at_r: radii
            .iter()
            .zip(within)
            .map(|(&r, w)| (r, w as f64 / n))
            .collect(),
    })
}

//! Query patterns, the KMP failure function, and the online matcher Alice
//! runs against her stream.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sources::{SourceError, StreamCursor, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("pattern is empty")]
    Empty,
    #[error("cannot parse pattern {0:?}")]
    Parse(String),
    #[error("symbol {symbol} is outside the alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("query set of size {alphabet}^{length} is too large")]
    TooLarge { alphabet: usize, length: usize },
}

/// Longest-proper-border table: `failure[i]` is the length of the longest
/// proper prefix of `symbols[..=i]` that is also its suffix.
pub fn build_failure_function(symbols: &[Symbol]) -> Result<Vec<usize>, PatternError> {
    if symbols.is_empty() {
        return Err(PatternError::Empty);
    }
    let m = symbols.len();
    let mut failure = vec![0; m];
    let mut k = 0;
    for i in 1..m {
        while k > 0 && symbols[k] != symbols[i] {
            k = failure[k - 1];
        }
        if symbols[k] == symbols[i] {
            k += 1;
        }
        failure[i] = k;
    }
    Ok(failure)
}

/// A fixed-length symbol sequence together with its failure function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryPattern {
    symbols: Vec<Symbol>,
    failure: Vec<usize>,
}

impl QueryPattern {
    pub fn new(symbols: Vec<Symbol>) -> Result<Self, PatternError> {
        let failure = build_failure_function(&symbols)?;
        Ok(Self { symbols, failure })
    }

    pub fn from_indices(indices: &[u8]) -> Result<Self, PatternError> {
        Self::new(indices.iter().map(|&i| Symbol(i)).collect())
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn failure(&self) -> &[usize] {
        &self.failure
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn check_alphabet(&self, alphabet: usize) -> Result<(), PatternError> {
        match self.symbols.iter().find(|s| s.index() >= alphabet) {
            Some(s) => Err(PatternError::SymbolOutOfRange { symbol: s.index(), alphabet }),
            None => Ok(()),
        }
    }

    /// Matched-prefix length after reading `s` in state `k` (`k < m`).
    /// A return value of `m` is a hit.
    #[inline]
    pub fn advance(&self, k: usize, s: Symbol) -> usize {
        self.advance_counting(k, s).0
    }

    /// Like [`advance`](Self::advance), also reporting how many failure links
    /// were followed.
    #[inline]
    fn advance_counting(&self, mut k: usize, s: Symbol) -> (usize, usize) {
        let mut walks = 0;
        while k > 0 && self.symbols[k] != s {
            k = self.failure[k - 1];
            walks += 1;
        }
        if self.symbols[k] == s {
            k += 1;
        }
        (k, walks)
    }

    pub fn reversed(&self) -> Self {
        let mut s = self.symbols.clone();
        s.reverse();
        Self::new(s).expect("non-empty")
    }

    /// Bitwise complement; only meaningful for binary patterns.
    pub fn complemented(&self) -> Self {
        Self::new(self.symbols.iter().map(|s| Symbol(1 - s.0.min(1))).collect()).expect("non-empty")
    }
}

impl fmt::Display for QueryPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.symbols.iter().all(|s| s.0 < 10) {
            for s in &self.symbols {
                write!(f, "{}", s.0)?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.symbols.iter().map(|s| s.0.to_string()).collect();
            write!(f, "{}", parts.join(","))
        }
    }
}

/// Parses `"0111"` (one digit per symbol) or `"10,3,4"` (comma separated).
impl FromStr for QueryPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || PatternError::Parse(s.to_string());
        let symbols: Vec<Symbol> = if s.contains(',') {
            s.split(',')
                .map(|tok| tok.trim().parse::<u8>().map(Symbol).map_err(|_| bad()))
                .collect::<Result<_, _>>()?
        } else {
            s.chars()
                .map(|c| c.to_digit(10).map(|d| Symbol(d as u8)).ok_or_else(bad))
                .collect::<Result<_, _>>()?
        };
        Self::new(symbols)
    }
}

impl Serialize for QueryPattern {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QueryPattern {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All `|Z|^m` patterns of length `m`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    alphabet: usize,
    length: usize,
    patterns: Vec<QueryPattern>,
}

impl QuerySet {
    pub const MAX_SIZE: usize = 1 << 16;

    pub fn all(alphabet: usize, length: usize) -> Result<Self, PatternError> {
        if length == 0 {
            return Err(PatternError::Empty);
        }
        let size = (alphabet as u128).checked_pow(length as u32).filter(|&n| n <= Self::MAX_SIZE as u128);
        let Some(size) = size else {
            return Err(PatternError::TooLarge { alphabet, length });
        };
        let patterns = (0..size as usize)
            .map(|mut idx| {
                let mut syms = vec![Symbol(0); length];
                for slot in syms.iter_mut().rev() {
                    *slot = Symbol((idx % alphabet) as u8);
                    idx /= alphabet;
                }
                QueryPattern::new(syms).expect("length >= 1")
            })
            .collect();
        Ok(Self { alphabet, length, patterns })
    }

    /// An explicit candidate list (sorted, deduplicated).
    pub fn from_patterns(alphabet: usize, mut patterns: Vec<QueryPattern>) -> Result<Self, PatternError> {
        let length = patterns.first().map(QueryPattern::len).ok_or(PatternError::Empty)?;
        for p in &patterns {
            p.check_alphabet(alphabet)?;
        }
        patterns.sort();
        patterns.dedup();
        Ok(Self { alphabet, length, patterns })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn pattern_len(&self) -> usize {
        self.length
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn get(&self, idx: usize) -> &QueryPattern {
        &self.patterns[idx]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QueryPattern> {
        self.patterns.iter()
    }

    pub fn index_of(&self, pattern: &QueryPattern) -> Option<usize> {
        self.patterns.binary_search(pattern).ok()
    }
}

/// Outcome of one query: how many symbols Alice consumed and whether the
/// pattern was actually seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitRecord {
    pub delta_t: u64,
    /// Absolute index (1-based symbol count) at which the search stopped.
    pub absolute_end: u64,
    pub censored: bool,
}

/// Streaming KMP matcher over a single pattern.
#[derive(Debug, Clone)]
pub struct Matcher<'p> {
    pattern: &'p QueryPattern,
    matched: usize,
    transitions: usize,
}

impl<'p> Matcher<'p> {
    pub fn new(pattern: &'p QueryPattern) -> Self {
        Self { pattern, matched: 0, transitions: 0 }
    }

    /// Feeds one symbol; returns true when the pattern completes. The matcher
    /// resets after a hit so the next window starts after this one.
    pub fn push(&mut self, s: Symbol) -> bool {
        let (k, walks) = self.pattern.advance_counting(self.matched, s);
        self.transitions += walks + 1;
        if k == self.pattern.len() {
            self.matched = 0;
            true
        } else {
            self.matched = k;
            false
        }
    }

    pub fn matched(&self) -> usize {
        self.matched
    }

    /// State transitions performed so far, failure-link walks included.
    pub fn transitions(&self) -> usize {
        self.transitions
    }
}

/// Reads from `cursor` until `pattern` occurs, starting with an empty match.
/// An exhausted stream yields a censored record.
pub fn stream_hit<R: Rng + ?Sized>(cursor: &mut StreamCursor<'_>, pattern: &QueryPattern, rng: &mut R) -> HitRecord {
    let start = cursor.t();
    let mut matcher = Matcher::new(pattern);
    loop {
        match cursor.next_symbol(rng) {
            Ok(s) => {
                if matcher.push(s) {
                    return HitRecord { delta_t: cursor.t() - start, absolute_end: cursor.t(), censored: false };
                }
            }
            Err(SourceError::TraceExhausted(_)) | Err(_) => {
                return HitRecord { delta_t: cursor.t() - start, absolute_end: cursor.t(), censored: true };
            }
        }
    }
}

/// End offsets (exclusive, i.e. index of last symbol + 1) of every occurrence
/// of `pattern` in `text`, overlapping occurrences included.
pub fn occurrence_ends(text: &[Symbol], pattern: &QueryPattern) -> Vec<usize> {
    let m = pattern.len();
    let mut out = Vec::new();
    let mut k = 0;
    for (i, &s) in text.iter().enumerate() {
        k = pattern.advance(k, s);
        if k == m {
            out.push(i + 1);
            k = pattern.failure()[m - 1];
        }
    }
    out
}

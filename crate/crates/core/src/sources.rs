//! Generative models for the observed symbol stream and the hypothesis switch.
//!
//! A [`SourceModel`] is immutable and can be shared between threads. All
//! mutable stream state lives in a [`StreamCursor`], which only ever moves
//! forward: once a symbol has been emitted it cannot be read again.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a probability vector sums to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("alphabet must contain at least two symbols, got {0}")]
    AlphabetTooSmall(usize),
    #[error("probability vector entry {index} is {value}, outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("markov order must be at least 1")]
    ZeroOrder,
    #[error("stay probability {0} is outside [0, 1]")]
    StayOutOfRange(f64),
    #[error("persistence parameter {0} is outside (0, 1]")]
    PersistenceOutOfRange(f64),
    #[error("symbol {symbol} is outside the alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("hypotheses use different alphabets ({0} vs {1})")]
    AlphabetMismatch(usize, usize),
    #[error("prior {0} is outside [0, 1]")]
    PriorOutOfRange(f64),
    /// The stream has no more symbols to give: either a replayed trace ran
    /// out or the cursor's observation budget is spent.
    #[error("stream exhausted after {0} symbols")]
    TraceExhausted(u64),
}

/// Index into the alphabet `{0, .., |Z| - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Symbol(pub u8);

impl Symbol {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which of the two hypotheses generated the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Hypothesis {
    pub fn label(self) -> u8 {
        match self {
            Hypothesis::One => 1,
            Hypothesis::Two => 2,
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

pub(crate) fn validate_distribution(p: &[f64]) -> Result<(), SourceError> {
    for (index, &value) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) || value.is_nan() {
            return Err(SourceError::ProbabilityOutOfRange { index, value });
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(SourceError::NotNormalized { sum });
    }
    Ok(())
}

/// Draws an index from a discrete law by inverting its CDF. Never returns an
/// index whose probability is zero.
pub(crate) fn sample_discrete<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        last_positive = i;
        acc += pi;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// An order-`ℓ` Markov kernel over an alphabet of size `|Z|`.
///
/// Contexts are the last `ℓ` symbols encoded in base `|Z|`, oldest symbol
/// most significant. `transitions[c][z]` is `P(z | c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovKernel {
    alphabet: usize,
    order: usize,
    transitions: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl MarkovKernel {
    /// Builds a kernel whose initial context law is the stationary law.
    pub fn new(alphabet: usize, order: usize, transitions: Vec<Vec<f64>>) -> Result<Self, SourceError> {
        let mut kernel = Self::unchecked(alphabet, order, transitions, Vec::new())?;
        kernel.initial = kernel.stationary_contexts();
        Ok(kernel)
    }

    pub fn with_initial(
        alphabet: usize,
        order: usize,
        transitions: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self, SourceError> {
        let contexts = context_count(alphabet, order);
        if initial.len() != contexts {
            return Err(SourceError::LengthMismatch { expected: contexts, got: initial.len() });
        }
        validate_distribution(&initial)?;
        Self::unchecked(alphabet, order, transitions, initial)
    }

    fn unchecked(
        alphabet: usize,
        order: usize,
        transitions: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self, SourceError> {
        if alphabet < 2 {
            return Err(SourceError::AlphabetTooSmall(alphabet));
        }
        if order == 0 {
            return Err(SourceError::ZeroOrder);
        }
        let contexts = context_count(alphabet, order);
        if transitions.len() != contexts {
            return Err(SourceError::LengthMismatch { expected: contexts, got: transitions.len() });
        }
        for row in &transitions {
            if row.len() != alphabet {
                return Err(SourceError::LengthMismatch { expected: alphabet, got: row.len() });
            }
            validate_distribution(row)?;
        }
        Ok(Self { alphabet, order, transitions, initial })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn context_count(&self) -> usize {
        self.transitions.len()
    }

    #[inline]
    pub fn prob(&self, context: usize, symbol: usize) -> f64 {
        self.transitions[context][symbol]
    }

    #[inline]
    pub fn next_context(&self, context: usize, symbol: usize) -> usize {
        (context * self.alphabet + symbol) % self.transitions.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Encodes the last `order` symbols of `symbols` as a context index.
    pub fn context_of(&self, symbols: &[Symbol]) -> Option<usize> {
        if symbols.len() < self.order {
            return None;
        }
        let tail = &symbols[symbols.len() - self.order..];
        Some(tail.iter().fold(0, |acc, s| acc * self.alphabet + s.index()))
    }

    /// Stationary law over contexts, by power iteration on the lazy chain
    /// `(I + P) / 2` started from the uniform law.
    pub fn stationary_contexts(&self) -> Vec<f64> {
        let n = self.context_count();
        let mut x = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
            for (c, &mass) in x.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for z in 0..self.alphabet {
                    let p = self.transitions[c][z];
                    if p > 0.0 {
                        next[self.next_context(c, z)] += 0.5 * mass * p;
                    }
                }
            }
            let diff: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if diff < 1e-15 {
                break;
            }
        }
        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
        x
    }

    /// Stationary law of a single emitted symbol.
    pub fn stationary_symbols(&self) -> Vec<f64> {
        let ctx = self.stationary_contexts();
        let mut out = vec![0.0; self.alphabet];
        for (c, &w) in ctx.iter().enumerate() {
            for (z, slot) in out.iter_mut().enumerate() {
                *slot += w * self.transitions[c][z];
            }
        }
        out
    }
}

fn context_count(alphabet: usize, order: usize) -> usize {
    alphabet.pow(order as u32)
}

/// Where a replayed trace starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TraceStart {
    #[default]
    Beginning,
    /// Uniform offset in `[lo, len)`.
    RandomFrom(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceModel {
    Iid { probs: Vec<f64> },
    Markov(MarkovKernel),
    Trace { alphabet: usize, symbols: Arc<[Symbol]>, start: TraceStart },
}

/// IID source emitting symbol `z` with probability `p[z]`.
pub fn make_iid(p: &[f64]) -> Result<SourceModel, SourceError> {
    if p.len() < 2 {
        return Err(SourceError::AlphabetTooSmall(p.len()));
    }
    validate_distribution(p)?;
    Ok(SourceModel::Iid { probs: p.to_vec() })
}

/// Binary IID source with `P(Z = 1) = p1`.
pub fn make_bernoulli(p1: f64) -> Result<SourceModel, SourceError> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(SourceError::ProbabilityOutOfRange { index: 1, value: p1 });
    }
    make_iid(&[1.0 - p1, p1])
}

/// Binary symmetric order-1 chain that keeps its last symbol with
/// probability `stay`. Starts from the uniform law.
pub fn make_binary_symmetric_markov(stay: f64) -> Result<SourceModel, SourceError> {
    if !(0.0..=1.0).contains(&stay) || stay.is_nan() {
        return Err(SourceError::StayOutOfRange(stay));
    }
    let flip = 1.0 - stay;
    let kernel = MarkovKernel::with_initial(
        2,
        1,
        vec![vec![stay, flip], vec![flip, stay]],
        vec![0.5, 0.5],
    )?;
    Ok(SourceModel::Markov(kernel))
}

/// Persistent chain family `P(z | z') = 1/2 + (0.4 + 0.1 p)` when `z = z'`,
/// so the stay probability runs from 0.9 (p -> 0) to 1 (p = 1).
pub fn make_markov_persistent(p: f64) -> Result<SourceModel, SourceError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SourceError::PersistenceOutOfRange(p));
    }
    make_binary_symmetric_markov(persistent_stay(p))
}

pub fn persistent_stay(p: f64) -> f64 {
    0.5 + (0.4 + 0.1 * p)
}

pub fn make_trace(alphabet: usize, symbols: Vec<Symbol>, start: TraceStart) -> Result<SourceModel, SourceError> {
    if alphabet < 2 {
        return Err(SourceError::AlphabetTooSmall(alphabet));
    }
    if symbols.is_empty() {
        return Err(SourceError::EmptyTrace);
    }
    if let Some(bad) = symbols.iter().find(|s| s.index() >= alphabet) {
        return Err(SourceError::SymbolOutOfRange { symbol: bad.index(), alphabet });
    }
    Ok(SourceModel::Trace { alphabet, symbols: symbols.into(), start })
}

impl SourceModel {
    pub fn alphabet(&self) -> usize {
        match self {
            SourceModel::Iid { probs } => probs.len(),
            SourceModel::Markov(k) => k.alphabet(),
            SourceModel::Trace { alphabet, .. } => *alphabet,
        }
    }

    /// Markov order; 0 for memoryless sources and traces.
    pub fn markov_order(&self) -> usize {
        match self {
            SourceModel::Markov(k) => k.order(),
            _ => 0,
        }
    }

    /// Marginal law of one symbol in the stationary regime (empirical
    /// frequencies for traces).
    pub fn stationary_law(&self) -> Vec<f64> {
        match self {
            SourceModel::Iid { probs } => probs.clone(),
            SourceModel::Markov(k) => k.stationary_symbols(),
            SourceModel::Trace { alphabet, symbols, .. } => {
                let mut counts = vec![0.0; *alphabet];
                for s in symbols.iter() {
                    counts[s.index()] += 1.0;
                }
                let n = symbols.len() as f64;
                counts.iter().map(|c| c / n).collect()
            }
        }
    }

    pub fn cursor<R: Rng + ?Sized>(&self, rng: &mut R) -> StreamCursor<'_> {
        StreamCursor::new(self, rng)
    }
}

/// A source pair plus Bob's prior `π₀ = P(Ω = 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPair {
    pub p1: SourceModel,
    pub p2: SourceModel,
    pub prior: f64,
}

impl HypothesisPair {
    pub fn new(p1: SourceModel, p2: SourceModel, prior: f64) -> Result<Self, SourceError> {
        if p1.alphabet() != p2.alphabet() {
            return Err(SourceError::AlphabetMismatch(p1.alphabet(), p2.alphabet()));
        }
        if !(0.0..=1.0).contains(&prior) {
            return Err(SourceError::PriorOutOfRange(prior));
        }
        Ok(Self { p1, p2, prior })
    }

    pub fn alphabet(&self) -> usize {
        self.p1.alphabet()
    }

    pub fn source(&self, h: Hypothesis) -> &SourceModel {
        match h {
            Hypothesis::One => &self.p1,
            Hypothesis::Two => &self.p2,
        }
    }
}

/// Draws the switch variable: hypothesis one with probability `prior`.
pub fn draw_switch<R: Rng + ?Sized>(prior: f64, rng: &mut R) -> Hypothesis {
    let u: f64 = rng.random();
    if u < prior {
        Hypothesis::One
    } else {
        Hypothesis::Two
    }
}

/// Forward-only reader over a [`SourceModel`].
#[derive(Debug, Clone)]
pub struct StreamCursor<'a> {
    model: &'a SourceModel,
    /// Markov context or trace position, depending on the model.
    state: usize,
    t: u64,
    budget: Option<u64>,
}

impl<'a> StreamCursor<'a> {
    pub fn new<R: Rng + ?Sized>(model: &'a SourceModel, rng: &mut R) -> Self {
        let state = match model {
            SourceModel::Iid { .. } => 0,
            SourceModel::Markov(k) => sample_discrete(k.initial(), rng),
            SourceModel::Trace { symbols, start, .. } => match *start {
                TraceStart::Beginning => 0,
                TraceStart::RandomFrom(lo) => {
                    let lo = lo.min(symbols.len() - 1);
                    rng.random_range(lo..symbols.len())
                }
            },
        };
        Self { model, state, t: 0, budget: None }
    }

    /// Markov cursor starting from a fixed context instead of the initial law.
    pub fn with_context(model: &'a SourceModel, context: usize) -> Self {
        Self { model, state: context, t: 0, budget: None }
    }

    /// Caps the number of symbols this cursor will emit.
    pub fn with_budget(mut self, max_symbols: u64) -> Self {
        self.budget = Some(max_symbols);
        self
    }

    /// Symbols emitted so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn model(&self) -> &'a SourceModel {
        self.model
    }

    pub fn is_exhausted(&self) -> bool {
        if self.budget.is_some_and(|b| self.t >= b) {
            return true;
        }
        match self.model {
            SourceModel::Trace { symbols, .. } => self.state >= symbols.len(),
            _ => false,
        }
    }

    pub fn next_symbol<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Symbol, SourceError> {
        if self.is_exhausted() {
            return Err(SourceError::TraceExhausted(self.t));
        }
        let z = match self.model {
            SourceModel::Iid { probs } => sample_discrete(probs, rng),
            SourceModel::Markov(k) => {
                let z = sample_discrete(&k.transitions[self.state], rng);
                self.state = k.next_context(self.state, z);
                z
            }
            SourceModel::Trace { symbols, .. } => {
                let z = symbols[self.state].index();
                self.state += 1;
                z
            }
        };
        self.t += 1;
        Ok(Symbol(z as u8))
    }
}

//! Exact hit-time laws by dynamic programming over the matched-prefix
//! length (and, for Markov sources, the last `ℓ` emitted symbols).
//!
//! The DP is advanced until the captured hit mass reaches `1 - ε`; the
//! horizon starts at `4m` and doubles. The raw prefix of the law is then
//! renormalized, so every [`HitTimePmf`] sums to one on `1..=t_max`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::QueryPattern;
use crate::sources::{MarkovKernel, SourceModel, Symbol};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Horizons beyond this are refused rather than allocated.
pub const MAX_HORIZON: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmfError {
    #[error("pattern {0} has probability zero under the source")]
    PatternImpossible(String),
    #[error("pattern {0} is not hit almost surely from the start state")]
    HitNotCertain(String),
    #[error("captured mass {mass} is below 1 - {epsilon}")]
    InsufficientMass { mass: f64, epsilon: f64 },
    #[error("epsilon {0} must lie in (0, 0.5)")]
    InvalidEpsilon(f64),
    #[error("markov order {order} exceeds pattern length {length}")]
    OrderExceedsPattern { order: usize, length: usize },
    #[error("pattern symbol outside the source alphabet of size {0}")]
    AlphabetMismatch(usize),
    #[error("start context does not match the kernel: {0}")]
    BadStart(String),
    #[error("no closed-form law for trace-backed sources")]
    UnsupportedSource,
    #[error("horizon would exceed {MAX_HORIZON} steps")]
    HorizonExceeded,
}

/// Normalized, truncated law of the inter-arrival time `ΔT` on `1..=t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitTimePmf {
    /// `probs[t - 1] = P(ΔT = t)`.
    probs: Vec<f64>,
    /// `ln P(ΔT = t)`, kept separately because far tails underflow `probs`
    /// long before they are structurally zero.
    #[serde(skip)]
    log_probs: Vec<f64>,
    mass_captured: f64,
    epsilon: f64,
}

impl HitTimePmf {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn t_max(&self) -> usize {
        self.probs.len()
    }

    /// Mass of the raw law on `1..=t_max` before normalization.
    pub fn mass_captured(&self) -> f64 {
        self.mass_captured
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Raw mass that fell beyond the horizon.
    pub fn tail_mass(&self) -> f64 {
        (1.0 - self.mass_captured).max(0.0)
    }

    /// `P(ΔT = t)`, zero outside `1..=t_max`.
    pub fn prob(&self, t: u64) -> f64 {
        if t == 0 {
            return 0.0;
        }
        self.probs.get(t as usize - 1).copied().unwrap_or(0.0)
    }

    /// `ln P(ΔT = t)`; `-inf` only where the law is structurally zero.
    pub fn ln_prob(&self, t: u64) -> f64 {
        if t == 0 {
            return f64::NEG_INFINITY;
        }
        let i = t as usize - 1;
        match self.log_probs.get(i) {
            Some(&lp) => lp,
            None => self.prob(t).ln(),
        }
    }

    /// Log-probabilities on `1..=t_max`, recomputed from `probs` when the
    /// law was deserialized.
    pub fn log_probs(&self) -> std::borrow::Cow<'_, [f64]> {
        if self.log_probs.len() == self.probs.len() {
            std::borrow::Cow::Borrowed(&self.log_probs)
        } else {
            std::borrow::Cow::Owned(self.probs.iter().map(|p| p.ln()).collect())
        }
    }

    /// `P(ΔT > c)` under the normalized law.
    pub fn survival(&self, c: u64) -> f64 {
        let from = (c as usize).min(self.probs.len());
        self.probs[from..].iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }
}

/// Normalizes a raw partial law whose mass is at least `1 - epsilon`.
pub fn truncate_and_normalize(raw: &[f64], epsilon: f64) -> Result<HitTimePmf, PmfError> {
    check_epsilon(epsilon)?;
    let mass: f64 = raw.iter().sum();
    if !(mass >= 1.0 - epsilon) {
        return Err(PmfError::InsufficientMass { mass, epsilon });
    }
    let probs: Vec<f64> = raw.iter().map(|p| p / mass).collect();
    let log_probs = probs.iter().map(|p| p.ln()).collect();
    Ok(HitTimePmf { probs, log_probs, mass_captured: mass, epsilon })
}

fn normalize_logged(raw: &[f64], log_raw: &[f64], epsilon: f64) -> Result<HitTimePmf, PmfError> {
    let mut pmf = truncate_and_normalize(raw, epsilon)?;
    let ln_mass = pmf.mass_captured.ln();
    pmf.log_probs = log_raw.iter().map(|lp| lp - ln_mass).collect();
    Ok(pmf)
}

/// Table mass below this is rescaled to 1 and the factor moved into a log.
const RESCALE_BELOW: f64 = 1e-150;

fn check_epsilon(epsilon: f64) -> Result<(), PmfError> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(PmfError::InvalidEpsilon(epsilon))
    }
}

/// Where the source stands when Alice starts searching.
#[derive(Debug, Clone, PartialEq)]
pub enum StartContext {
    /// The kernel's own initial law (stationary unless overridden).
    Initial,
    Stationary,
    /// The last `ℓ` symbols already emitted, e.g. the previous query.
    Symbols(Vec<Symbol>),
    Context(usize),
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
enum Emission<'a> {
    Iid(&'a [f64]),
    Markov(&'a MarkovKernel),
}

impl Emission<'_> {
    fn alphabet(&self) -> usize {
        match self {
            Emission::Iid(p) => p.len(),
            Emission::Markov(k) => k.alphabet(),
        }
    }

    fn contexts(&self) -> usize {
        match self {
            Emission::Iid(_) => 1,
            Emission::Markov(k) => k.context_count(),
        }
    }

    #[inline]
    fn prob(&self, c: usize, z: usize) -> f64 {
        match self {
            Emission::Iid(p) => p[z],
            Emission::Markov(k) => k.prob(c, z),
        }
    }

    #[inline]
    fn next(&self, c: usize, z: usize) -> usize {
        match self {
            Emission::Iid(_) => 0,
            Emission::Markov(k) => k.next_context(c, z),
        }
    }
}

/// One step of the hit-time recursion at a time.
///
/// State index is `k * contexts + c` for matched-prefix length `k < m` and
/// source context `c`. A transition into `k = m` is a hit; its mass leaves
/// the table and is recorded as `P(ΔT = t)`.
#[derive(Debug, Clone)]
pub struct HitTimeDp<'a> {
    emission: Emission<'a>,
    /// `automaton[k][z]`: next matched length, `m` meaning hit.
    automaton: Vec<Vec<usize>>,
    m: usize,
    /// Table mass times `exp(-log_scale)`.
    state: Vec<f64>,
    scratch: Vec<f64>,
    log_scale: f64,
    raw: Vec<f64>,
    log_raw: Vec<f64>,
    hit_mass: f64,
}

impl<'a> HitTimeDp<'a> {
    pub fn iid(pattern: &QueryPattern, p: &'a [f64]) -> Result<Self, PmfError> {
        if pattern.check_alphabet(p.len()).is_err() {
            return Err(PmfError::AlphabetMismatch(p.len()));
        }
        if pattern.symbols().iter().any(|s| p[s.index()] <= 0.0) {
            return Err(PmfError::PatternImpossible(pattern.to_string()));
        }
        Ok(Self::build(pattern, Emission::Iid(p), vec![1.0]))
    }

    pub fn markov(pattern: &QueryPattern, kernel: &'a MarkovKernel, start: &StartContext) -> Result<Self, PmfError> {
        if pattern.check_alphabet(kernel.alphabet()).is_err() {
            return Err(PmfError::AlphabetMismatch(kernel.alphabet()));
        }
        if kernel.order() > pattern.len() {
            return Err(PmfError::OrderExceedsPattern { order: kernel.order(), length: pattern.len() });
        }
        let n = kernel.context_count();
        let init = match start {
            StartContext::Initial => kernel.initial().to_vec(),
            StartContext::Stationary => kernel.stationary_contexts(),
            StartContext::Symbols(syms) => {
                let c = kernel
                    .context_of(syms)
                    .ok_or_else(|| PmfError::BadStart(format!("need {} symbols, got {}", kernel.order(), syms.len())))?;
                point_mass(n, c)
            }
            StartContext::Context(c) => {
                if *c >= n {
                    return Err(PmfError::BadStart(format!("context {c} >= {n}")));
                }
                point_mass(n, *c)
            }
            StartContext::Distribution(d) => {
                if d.len() != n {
                    return Err(PmfError::BadStart(format!("expected {n} context weights, got {}", d.len())));
                }
                d.clone()
            }
        };
        let dp = Self::build(pattern, Emission::Markov(kernel), init);
        dp.check_reachability(pattern)?;
        Ok(dp)
    }

    fn build(pattern: &QueryPattern, emission: Emission<'a>, init: Vec<f64>) -> Self {
        let m = pattern.len();
        let alphabet = emission.alphabet();
        let automaton = (0..m)
            .map(|k| (0..alphabet).map(|z| pattern.advance(k, Symbol(z as u8))).collect())
            .collect();
        let contexts = emission.contexts();
        let mut state = vec![0.0; m * contexts];
        state[..contexts].copy_from_slice(&init);
        Self {
            emission,
            automaton,
            m,
            scratch: vec![0.0; state.len()],
            state,
            log_scale: 0.0,
            raw: Vec::new(),
            log_raw: Vec::new(),
            hit_mass: 0.0,
        }
    }

    /// Forward reachability from the start support to the hit, and backward
    /// reachability from every reachable state. A hit that is unreachable
    /// means the pattern is impossible; a reachable state that cannot hit
    /// means the law is defective.
    fn check_reachability(&self, pattern: &QueryPattern) -> Result<(), PmfError> {
        let contexts = self.emission.contexts();
        let alphabet = self.emission.alphabet();
        let n = self.state.len();
        let hit = n;
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for k in 0..self.m {
            for c in 0..contexts {
                let from = k * contexts + c;
                for z in 0..alphabet {
                    if self.emission.prob(c, z) <= 0.0 {
                        continue;
                    }
                    let j = self.automaton[k][z];
                    let to = if j == self.m { hit } else { j * contexts + self.emission.next(c, z) };
                    succ[from].push(to);
                    pred[to].push(from);
                }
            }
        }
        let mut reach = vec![false; n + 1];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.state[i] > 0.0).collect();
        queue.iter().for_each(|&i| reach[i] = true);
        while let Some(u) = queue.pop_front() {
            if u == hit {
                continue;
            }
            for &v in &succ[u] {
                if !reach[v] {
                    reach[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if !reach[hit] {
            return Err(PmfError::PatternImpossible(pattern.to_string()));
        }
        let mut coreach = vec![false; n + 1];
        coreach[hit] = true;
        let mut queue = VecDeque::from([hit]);
        while let Some(v) = queue.pop_front() {
            for &u in &pred[v] {
                if !coreach[u] {
                    coreach[u] = true;
                    queue.push_back(u);
                }
            }
        }
        if (0..n).any(|i| reach[i] && !coreach[i]) {
            return Err(PmfError::HitNotCertain(pattern.to_string()));
        }
        Ok(())
    }

    /// Advances one symbol; returns `P(ΔT = t)` for the new `t`.
    pub fn step(&mut self) -> f64 {
        let contexts = self.emission.contexts();
        let alphabet = self.emission.alphabet();
        self.scratch.iter_mut().for_each(|v| *v = 0.0);
        let mut pmf_t = 0.0;
        let mut kept = 0.0;
        for k in 0..self.m {
            for c in 0..contexts {
                let mass = self.state[k * contexts + c];
                if mass == 0.0 {
                    continue;
                }
                for z in 0..alphabet {
                    let q = self.emission.prob(c, z);
                    if q == 0.0 {
                        continue;
                    }
                    let j = self.automaton[k][z];
                    if j == self.m {
                        pmf_t += mass * q;
                    } else {
                        self.scratch[j * contexts + self.emission.next(c, z)] += mass * q;
                        kept += mass * q;
                    }
                }
            }
        }
        std::mem::swap(&mut self.state, &mut self.scratch);
        self.log_raw.push(pmf_t.ln() + self.log_scale);
        let pmf_t = pmf_t * self.log_scale.exp();
        self.raw.push(pmf_t);
        self.hit_mass += pmf_t;
        if kept > 0.0 && kept < RESCALE_BELOW {
            self.state.iter_mut().for_each(|v| *v /= kept);
            self.log_scale += kept.ln();
        }
        pmf_t
    }

    /// Steps taken so far.
    pub fn t(&self) -> usize {
        self.raw.len()
    }

    pub fn hit_mass(&self) -> f64 {
        self.hit_mass
    }

    /// Mass still in the table (not yet hit).
    pub fn remaining_mass(&self) -> f64 {
        self.state.iter().sum::<f64>() * self.log_scale.exp()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Runs until the horizon (starting at `4m`, doubling) is at least
    /// `min_t_max` and the captured mass is at least `1 - epsilon`.
    pub fn run(mut self, epsilon: f64, min_t_max: usize) -> Result<HitTimePmf, PmfError> {
        check_epsilon(epsilon)?;
        let mut t_max = 4 * self.m;
        loop {
            while self.t() < t_max {
                self.step();
            }
            if t_max >= min_t_max && self.hit_mass >= 1.0 - epsilon {
                break;
            }
            t_max *= 2;
            if t_max > MAX_HORIZON {
                return Err(PmfError::HorizonExceeded);
            }
        }
        normalize_logged(&self.raw, &self.log_raw, epsilon)
    }
}

fn point_mass(n: usize, c: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[c] = 1.0;
    v
}

/// Hit-time law of `pattern` in an IID stream with symbol law `p`.
pub fn hit_time_pmf_iid(pattern: &QueryPattern, p: &[f64], epsilon: f64) -> Result<HitTimePmf, PmfError> {
    HitTimeDp::iid(pattern, p)?.run(epsilon, 0)
}

/// Hit-time law of `pattern` for a Markov source whose context when the
/// search begins is given by `start`.
pub fn hit_time_pmf_markov(
    pattern: &QueryPattern,
    kernel: &MarkovKernel,
    start: &StartContext,
    epsilon: f64,
) -> Result<HitTimePmf, PmfError> {
    HitTimeDp::markov(pattern, kernel, start)?.run(epsilon, 0)
}

/// Dispatches on the model kind; `start` is ignored for IID sources.
pub fn hit_time_pmf(
    model: &SourceModel,
    pattern: &QueryPattern,
    start: &StartContext,
    epsilon: f64,
    min_t_max: usize,
) -> Result<HitTimePmf, PmfError> {
    match model {
        SourceModel::Iid { probs } => HitTimeDp::iid(pattern, probs)?.run(epsilon, min_t_max),
        SourceModel::Markov(k) => HitTimeDp::markov(pattern, k, start)?.run(epsilon, min_t_max),
        SourceModel::Trace { .. } => Err(PmfError::UnsupportedSource),
    }
}

/// Laws of the same query under both hypotheses, computed on a common
/// horizon so that they share an index range.
pub fn aligned_pair(
    p1: &SourceModel,
    p2: &SourceModel,
    pattern: &QueryPattern,
    start: &StartContext,
    epsilon: f64,
) -> Result<(HitTimePmf, HitTimePmf), PmfError> {
    let a = hit_time_pmf(p1, pattern, start, epsilon, 0)?;
    let b = hit_time_pmf(p2, pattern, start, epsilon, 0)?;
    Ok(match a.t_max().cmp(&b.t_max()) {
        std::cmp::Ordering::Less => (hit_time_pmf(p1, pattern, start, epsilon, b.t_max())?, b),
        std::cmp::Ordering::Greater => {
            let t = a.t_max();
            (a, hit_time_pmf(p2, pattern, start, epsilon, t)?)
        }
        std::cmp::Ordering::Equal => (a, b),
    })
}

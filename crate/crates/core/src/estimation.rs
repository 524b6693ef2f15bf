//! Hit-time estimators for sources known only through training traces.
//!
//! Hit times are sampled from uniformly random start offsets and turned into
//! Laplace-smoothed histograms on a common binning. The three quantities the
//! test needs (divergence, mean hit time, per-observation posterior) are
//! plug-in estimates from those histograms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{general_prior_posterior, kl_divergence_slices, Belief, QueryStats};
use crate::hitpmf::HitTimePmf;
use crate::patterns::{occurrence_ends, HitRecord, Matcher, QueryPattern, QuerySet};
use crate::sources::{Hypothesis, Symbol};
use crate::tables::HitModel;

pub const DEFAULT_SMOOTHING: f64 = 1.0;
pub const OVERFLOW_QUANTILE: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("trace too short or pattern too rare: {censored} of {attempts} samples censored")]
    InsufficientTrace { censored: usize, attempts: usize },
    #[error("trace of length {len} is shorter than pattern length + 1 = {need}")]
    TraceTooShort { len: usize, need: usize },
    #[error("no samples")]
    NoSamples,
    #[error("smoothing constant must be finite and non-negative")]
    InvalidSmoothing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub symbols: Vec<Symbol>,
    pub label: Hypothesis,
}

impl TrainingTrace {
    pub fn new(symbols: Vec<Symbol>, label: Hypothesis) -> Self {
        Self { symbols, label }
    }
}

/// Uncensored hit times plus how many draws were thrown away.
#[derive(Debug, Clone, PartialEq)]
pub struct HitSamples {
    pub times: Vec<u64>,
    pub censored: usize,
}

impl HitSamples {
    pub fn censoring_rate(&self) -> f64 {
        let attempts = self.times.len() + self.censored;
        if attempts == 0 {
            0.0
        } else {
            self.censored as f64 / attempts as f64
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.times.is_empty()).then(|| self.times.iter().sum::<u64>() as f64 / self.times.len() as f64)
    }
}

/// `n_samples` hit times of `pattern` from uniform random starts in `trace`.
/// A start whose search runs off the end is censored and redrawn, up to
/// `4 n_samples` draws in total.
pub fn sample_hit_times<R: Rng + ?Sized>(
    trace: &[Symbol],
    pattern: &QueryPattern,
    n_samples: usize,
    rng: &mut R,
) -> Result<HitSamples, EstimationError> {
    let m = pattern.len();
    if trace.len() < m + 1 {
        return Err(EstimationError::TraceTooShort { len: trace.len(), need: m + 1 });
    }
    let ends = occurrence_ends(trace, pattern);
    let mut times = Vec::with_capacity(n_samples);
    let mut censored = 0;
    let max_attempts = 4 * n_samples.max(1);
    let mut attempts = 0;
    while times.len() < n_samples && attempts < max_attempts {
        attempts += 1;
        let s = rng.random_range(0..trace.len());
        // first occurrence lying entirely at or after s
        let i = ends.partition_point(|&e| e < s + m);
        match ends.get(i) {
            Some(&e) => times.push((e - s) as u64),
            None => censored += 1,
        }
    }
    if times.len() < n_samples || 2 * censored > attempts {
        return Err(EstimationError::InsufficientTrace { censored, attempts });
    }
    Ok(HitSamples { times, censored })
}

/// Smoothed histogram over `lo..=hi` plus one overflow bin for `> hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: u64,
    pub bins: Vec<f64>,
    pub overflow: f64,
}

impl Histogram {
    pub fn from_samples(samples: &[u64], lo: u64, hi: u64, smoothing: f64) -> Result<Self, EstimationError> {
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(EstimationError::InvalidSmoothing);
        }
        if samples.is_empty() && smoothing == 0.0 {
            return Err(EstimationError::NoSamples);
        }
        let width = (hi.saturating_sub(lo) + 1) as usize;
        let mut counts = vec![0usize; width];
        let mut over = 0usize;
        for &x in samples {
            if x > hi {
                over += 1;
            } else if x >= lo {
                counts[(x - lo) as usize] += 1;
            }
        }
        let total = samples.len() as f64 + smoothing * (width + 1) as f64;
        Ok(Self {
            lo,
            bins: counts.iter().map(|&c| (c as f64 + smoothing) / total).collect(),
            overflow: (over as f64 + smoothing) / total,
        })
    }

    /// Unsmoothed histogram of an exact law, one bin per time step.
    pub fn from_pmf(pmf: &HitTimePmf) -> Self {
        Self { lo: 1, bins: pmf.probs().to_vec(), overflow: 0.0 }
    }

    pub fn hi(&self) -> u64 {
        self.lo + self.bins.len() as u64 - 1
    }

    pub fn prob(&self, t: u64) -> f64 {
        if t < self.lo {
            0.0
        } else if t > self.hi() {
            self.overflow
        } else {
            self.bins[(t - self.lo) as usize]
        }
    }

    /// Mass strictly above `c`.
    pub fn survival(&self, c: u64) -> f64 {
        if c < self.lo {
            return self.bins.iter().sum::<f64>() + self.overflow;
        }
        if c >= self.hi() {
            return self.overflow;
        }
        self.bins[(c - self.lo + 1) as usize..].iter().sum::<f64>() + self.overflow
    }

    /// Bin masses, overflow last.
    pub fn masses(&self) -> Vec<f64> {
        let mut v = self.bins.clone();
        v.push(self.overflow);
        v
    }
}

/// Common binning for two sample sets: from the smallest sample to the
/// pooled 99.5th percentile.
pub fn common_range(a: &[u64], b: &[u64]) -> Option<(u64, u64)> {
    let mut pooled: Vec<u64> = a.iter().chain(b).copied().collect();
    if pooled.is_empty() {
        return None;
    }
    pooled.sort_unstable();
    let idx = ((OVERFLOW_QUANTILE * pooled.len() as f64).ceil() as usize).clamp(1, pooled.len()) - 1;
    Some((pooled[0], pooled[idx]))
}

/// Plug-in divergence between two histograms on the same binning. Infinite
/// if `h1` has mass where `h2` has none (possible only without smoothing).
pub fn histogram_kl(h1: &Histogram, h2: &Histogram) -> f64 {
    debug_assert_eq!((h1.lo, h1.bins.len()), (h2.lo, h2.bins.len()));
    kl_divergence_slices(&h1.masses(), &h2.masses()).unwrap_or(f64::INFINITY)
}

/// Estimated laws and statistics of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEntry {
    pub h1: Histogram,
    pub h2: Histogram,
    pub stats: QueryStats,
    pub samples: [usize; 2],
    pub censoring_rate: [f64; 2],
}

impl EmpiricalEntry {
    pub fn fit(s1: &HitSamples, s2: &HitSamples, pattern: QueryPattern, smoothing: f64) -> Result<Self, EstimationError> {
        let (lo, hi) = common_range(&s1.times, &s2.times).ok_or(EstimationError::NoSamples)?;
        let h1 = Histogram::from_samples(&s1.times, lo, hi, smoothing)?;
        let h2 = Histogram::from_samples(&s2.times, lo, hi, smoothing)?;
        let stats = QueryStats {
            pattern,
            kl: histogram_kl(&h1, &h2),
            e1: s1.mean().ok_or(EstimationError::NoSamples)?,
            e2: s2.mean().ok_or(EstimationError::NoSamples)?,
        };
        Ok(Self {
            h1,
            h2,
            stats,
            samples: [s1.times.len(), s2.times.len()],
            censoring_rate: [s1.censoring_rate(), s2.censoring_rate()],
        })
    }

    /// Uniform-prior posterior of hypothesis one given a response.
    pub fn posterior_eq(&self, obs: &HitRecord) -> f64 {
        let (a, b) = if obs.censored {
            (self.h1.survival(obs.delta_t), self.h2.survival(obs.delta_t))
        } else {
            (self.h1.prob(obs.delta_t), self.h2.prob(obs.delta_t))
        };
        if a + b > 0.0 {
            a / (a + b)
        } else {
            0.5
        }
    }
}

/// Trace-driven replacement for exact tables. Hit times are treated as
/// independent of the previous query.
#[derive(Debug, Clone)]
pub struct EmpiricalHitModel {
    queries: QuerySet,
    entries: Vec<Result<EmpiricalEntry, EstimationError>>,
    smoothing: f64,
    sample_size: usize,
}

impl EmpiricalHitModel {
    /// Samples `n_samples` hit times per (query, trace). Queries whose
    /// sampling fails are excluded rather than failing the whole model.
    /// Deterministic in `seed`.
    pub fn fit(
        trace1: &[Symbol],
        trace2: &[Symbol],
        queries: QuerySet,
        n_samples: usize,
        smoothing: f64,
        seed: u64,
    ) -> Result<Self, EstimationError> {
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(EstimationError::InvalidSmoothing);
        }
        let entries = (0..queries.len())
            .into_par_iter()
            .map(|k| {
                let q = queries.get(k);
                let draw = |trace: &[Symbol], h: u64| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(2 * k as u64 + h);
                    sample_hit_times(trace, q, n_samples, &mut rng)
                };
                let s1 = draw(trace1, 0)?;
                let s2 = draw(trace2, 1)?;
                EmpiricalEntry::fit(&s1, &s2, q.clone(), smoothing)
            })
            .collect();
        Ok(Self { queries, entries, smoothing, sample_size: n_samples })
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn entry(&self, k: usize) -> Result<&EmpiricalEntry, &EstimationError> {
        self.entries[k].as_ref()
    }

    fn entry_for(&self, pattern: &QueryPattern) -> Option<&EmpiricalEntry> {
        self.queries.index_of(pattern).and_then(|k| self.entries[k].as_ref().ok())
    }
}

impl HitModel for EmpiricalHitModel {
    fn queries(&self) -> &QuerySet {
        &self.queries
    }

    fn stats(&self, _prev: Option<usize>, next: usize) -> Option<&QueryStats> {
        self.entries[next].as_ref().ok().map(|e| &e.stats)
    }

    fn posterior(&self, belief: Belief, _prev: Option<usize>, next: usize, obs: &HitRecord) -> Belief {
        match &self.entries[next] {
            Ok(e) => Belief::clamped(general_prior_posterior(e.posterior_eq(obs), belief.value())),
            Err(_) => belief,
        }
    }

    fn memoryless(&self) -> bool {
        true
    }
}

/// Plug-in divergence of `pattern`'s smoothed histograms; `None` if the
/// pattern is not in the model or was excluded.
/// Lag-one Pearson correlation of successive hit times when `pattern` is
/// queried back to back along `trace`. Reported only; the estimators above
/// treat hit times as independent. `None` with fewer than three hits or a
/// constant sequence.
pub fn inter_arrival_correlation(trace: &[Symbol], pattern: &QueryPattern) -> Option<f64> {
    let mut matcher = Matcher::new(pattern);
    let mut gaps = Vec::new();
    let mut last = 0usize;
    for (i, &z) in trace.iter().enumerate() {
        if matcher.push(z) {
            gaps.push((i + 1 - last) as f64);
            last = i + 1;
        }
    }
    if gaps.len() < 3 {
        return None;
    }
    let (x, y) = (&gaps[..gaps.len() - 1], &gaps[1..]);
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

pub fn estimate_kl(model: &EmpiricalHitModel, pattern: &QueryPattern) -> Option<f64> {
    model.entry_for(pattern).map(|e| e.stats.kl)
}

pub fn estimate_expected_hit_time(model: &EmpiricalHitModel, pattern: &QueryPattern, h: Hypothesis) -> Option<f64> {
    model.entry_for(pattern).map(|e| match h {
        Hypothesis::One => e.stats.e1,
        Hypothesis::Two => e.stats.e2,
    })
}

/// `h1(ΔT) / (h1(ΔT) + h2(ΔT))`, the posterior of hypothesis one under a
/// uniform prior.
pub fn posterior_from_histograms(model: &EmpiricalHitModel, pattern: &QueryPattern, delta_t: u64) -> Option<f64> {
    let obs = HitRecord { delta_t, absolute_end: delta_t, censored: false };
    model.entry_for(pattern).map(|e| e.posterior_eq(&obs))
}

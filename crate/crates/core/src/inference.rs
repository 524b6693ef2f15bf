//! Information quantities and belief algebra.
//!
//! KL divergences are in nats. Beliefs are Bob's probability that the
//! stream comes from hypothesis one, kept away from 0 and 1 by [`CLAMP_LO`]
//! so that rounding can never make a hypothesis unrecoverable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hitpmf::HitTimePmf;
use crate::patterns::QueryPattern;

pub const CLAMP_LO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("P1 has mass {p1} at t = {t} where P2 has none")]
    AbsoluteContinuityViolation { t: u64, p1: f64 },
    #[error("both likelihoods are zero")]
    BothLikelihoodsZero,
    #[error("negative likelihood")]
    NegativeLikelihood,
    #[error("threshold {0} must lie in (0, 0.5)")]
    InvalidThreshold(f64),
}

/// Bob's current probability that `Ω = 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(f64);

impl Belief {
    /// Prior belief, taken as given (a prior of exactly 0 or 1 is allowed
    /// and decides the test immediately).
    pub fn prior(pi: f64) -> Self {
        Belief(pi.clamp(0.0, 1.0))
    }

    pub fn clamped(pi: f64) -> Self {
        Belief(pi.clamp(CLAMP_LO, 1.0 - CLAMP_LO))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-query quantities entering the efficiency ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub pattern: QueryPattern,
    /// `D(P̂1 ‖ P̂2 | q)` in nats.
    pub kl: f64,
    /// Expected hit time under hypothesis one.
    pub e1: f64,
    pub e2: f64,
}

impl QueryStats {
    pub fn from_pmfs(pattern: QueryPattern, pmf1: &HitTimePmf, pmf2: &HitTimePmf) -> Result<Self, InferenceError> {
        Ok(Self { pattern, kl: kl_divergence(pmf1, pmf2)?, e1: pmf1.mean(), e2: pmf2.mean() })
    }

    /// Belief-averaged expected hit time.
    pub fn expected_time(&self, pi: f64) -> f64 {
        pi * self.e1 + (1.0 - pi) * self.e2
    }
}

/// `Σ_t p1(t) ln(p1(t) / p2(t))` over the union of both index ranges.
///
/// Works in log space so that tails where one law has underflowed still
/// contribute instead of tripping the support check.
pub fn kl_divergence(pmf1: &HitTimePmf, pmf2: &HitTimePmf) -> Result<f64, InferenceError> {
    let (l1, l2) = (pmf1.log_probs(), pmf2.log_probs());
    let mut acc = 0.0;
    for (i, (&a, &la)) in pmf1.probs().iter().zip(l1.iter()).enumerate() {
        if a <= 0.0 {
            continue;
        }
        let lb = l2.get(i).copied().unwrap_or(f64::NEG_INFINITY);
        if lb == f64::NEG_INFINITY {
            return Err(InferenceError::AbsoluteContinuityViolation { t: i as u64 + 1, p1: a });
        }
        acc += a * (la - lb);
    }
    Ok(acc.max(0.0))
}

/// Same as [`kl_divergence`] on bare slices indexed from `t = 1`.
pub fn kl_divergence_slices(p1: &[f64], p2: &[f64]) -> Result<f64, InferenceError> {
    let mut acc = 0.0;
    for (i, &a) in p1.iter().enumerate() {
        if a <= 0.0 {
            continue;
        }
        let b = p2.get(i).copied().unwrap_or(0.0);
        if b <= 0.0 {
            return Err(InferenceError::AbsoluteContinuityViolation { t: i as u64 + 1, p1: a });
        }
        acc += a * (a / b).ln();
    }
    // Rounding can leave tiny negative totals for identical inputs.
    Ok(acc.max(0.0))
}

/// `ν(q, π) = D / (π e1 + (1 - π) e2)`.
pub fn efficiency_ratio(stats: &QueryStats, pi: f64) -> f64 {
    stats.kl / stats.expected_time(pi)
}

/// One Bayes step: posterior of hypothesis one after seeing an observation
/// with likelihoods `l1`, `l2`.
pub fn bayes_update(belief: Belief, l1: f64, l2: f64) -> Result<Belief, InferenceError> {
    if l1 < 0.0 || l2 < 0.0 {
        return Err(InferenceError::NegativeLikelihood);
    }
    if l1 == 0.0 && l2 == 0.0 {
        return Err(InferenceError::BothLikelihoodsZero);
    }
    let pi = belief.value();
    let num = l1 * pi;
    Ok(Belief::clamped(num / (num + l2 * (1.0 - pi))))
}

/// Converts a uniform-prior posterior `p_eq` into the posterior under prior
/// `s`: `s / (s + (1 - s)(1 / p_eq - 1))`.
pub fn general_prior_posterior(p_eq: f64, s: f64) -> f64 {
    let p_eq = p_eq.clamp(CLAMP_LO, 1.0 - CLAMP_LO);
    let r = 1.0 / p_eq - 1.0;
    s / (s + (1.0 - s) * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Declare1,
    Declare2,
    Continue,
}

pub fn decide(belief: Belief, eps_t: f64) -> Decision {
    let pi = belief.value();
    if pi > 1.0 - eps_t {
        Decision::Declare1
    } else if pi < eps_t {
        Decision::Declare2
    } else {
        Decision::Continue
    }
}

pub fn check_threshold(eps_t: f64) -> Result<(), InferenceError> {
    if eps_t > 0.0 && eps_t < 0.5 {
        Ok(())
    } else {
        Err(InferenceError::InvalidThreshold(eps_t))
    }
}

/// Index of the maximum, ties (within a relative `1e-9`) going to the
/// lowest index. `None` entries are skipped.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<usize> {
    let vals: Vec<Option<f64>> = values.into_iter().collect();
    let best = vals.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let tol = 1e-9 * best.abs().max(1e-300);
    vals.iter().position(|v| v.is_some_and(|v| v >= best - tol))
}

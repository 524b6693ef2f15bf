//! Per-query hit-time tables and the [`HitModel`] interface the test
//! engine runs against.
//!
//! A model answers two questions about a query `next` sent right after
//! `prev` (`None` for the first query of a run): what are its divergence
//! and expected hit times, and how should the belief move after a response.
//! [`ExactTables`] answers both from exact hit-time laws; the trace-based
//! estimators in [`crate::estimation`] answer them from samples.

use rayon::prelude::*;
use thiserror::Error;

use crate::hitpmf::{aligned_pair, hit_time_pmf, HitTimePmf, PmfError, StartContext};
use crate::inference::{bayes_update, Belief, QueryStats};
use crate::patterns::{HitRecord, QueryPattern, QuerySet};
use crate::sources::HypothesisPair;

pub trait HitModel: Send + Sync {
    fn queries(&self) -> &QuerySet;

    /// Statistics of query `next` given the previous query; `None` if the
    /// query was excluded. Decisive queries report an infinite divergence.
    fn stats(&self, prev: Option<usize>, next: usize) -> Option<&QueryStats>;

    /// Belief after observing `obs` in response to `next`.
    fn posterior(&self, belief: Belief, prev: Option<usize>, next: usize, obs: &HitRecord) -> Belief;

    /// True when hit times do not depend on the previous query.
    fn memoryless(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("markov order {order} exceeds pattern length {length}")]
    OrderExceedsPattern { order: usize, length: usize },
    #[error("query alphabet {queries} does not match source alphabet {sources}")]
    AlphabetMismatch { queries: usize, sources: usize },
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

/// Exact laws and statistics of one query under both hypotheses. A `None`
/// law means the query never hits under that hypothesis; such a query is
/// decisive (infinite divergence) and is only chosen when nothing with a
/// finite efficiency ratio is available.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub pmf1: Option<HitTimePmf>,
    pub pmf2: Option<HitTimePmf>,
    pub stats: QueryStats,
}

impl PairEntry {
    pub fn is_decisive(&self) -> bool {
        self.pmf1.is_none() || self.pmf2.is_none()
    }

    /// Likelihoods of a response. A censored response contributes
    /// `P(ΔT > c)`. Responses beyond both horizons fall back to each
    /// law's truncated tail mass.
    pub fn likelihoods(&self, obs: &HitRecord) -> (f64, f64) {
        let lik = |p: &Option<HitTimePmf>| match p {
            Some(p) if obs.censored => p.survival(obs.delta_t),
            Some(p) => p.prob(obs.delta_t),
            None if obs.censored => 1.0,
            None => 0.0,
        };
        let (l1, l2) = (lik(&self.pmf1), lik(&self.pmf2));
        if let (false, Some(p1), Some(p2)) = (obs.censored, &self.pmf1, &self.pmf2) {
            if l1 == 0.0 || l2 == 0.0 {
                // Underflowed tails: only the ratio matters to the update.
                let (a, b) = (p1.ln_prob(obs.delta_t), p2.ln_prob(obs.delta_t));
                let top = a.max(b);
                if top.is_finite() {
                    return ((a - top).exp(), (b - top).exp());
                }
            }
        }
        if l1 == 0.0 && l2 == 0.0 {
            let tail = |p: &Option<HitTimePmf>| p.as_ref().map_or(0.0, HitTimePmf::tail_mass);
            (tail(&self.pmf1), tail(&self.pmf2))
        } else {
            (l1, l2)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableCell {
    Ready(Box<PairEntry>),
    Excluded(String),
}

impl TableCell {
    pub fn entry(&self) -> Option<&PairEntry> {
        match self {
            TableCell::Ready(e) => Some(e),
            TableCell::Excluded(_) => None,
        }
    }
}

/// Exact tables for a source pair over a query set.
///
/// Row 0 holds first-query laws (source in its initial state). For sources
/// with memory, row `n + 1` holds the laws of each query sent right after
/// query `n` was hit, i.e. starting from the suffix of query `n`.
#[derive(Debug, Clone)]
pub struct ExactTables {
    queries: QuerySet,
    rows: Vec<Vec<TableCell>>,
    memoryless: bool,
    epsilon: f64,
}

impl ExactTables {
    pub fn build(pair: &HypothesisPair, queries: QuerySet, epsilon: f64) -> Result<Self, TableError> {
        if queries.alphabet() != pair.alphabet() {
            return Err(TableError::AlphabetMismatch { queries: queries.alphabet(), sources: pair.alphabet() });
        }
        let order = pair.p1.markov_order().max(pair.p2.markov_order());
        if order > queries.pattern_len() {
            return Err(TableError::OrderExceedsPattern { order, length: queries.pattern_len() });
        }
        let memoryless = order == 0;
        let n = queries.len();
        let starts: Vec<StartContext> = std::iter::once(StartContext::Initial)
            .chain(
                (0..n)
                    .filter(|_| !memoryless)
                    .map(|i| StartContext::Symbols(queries.get(i).symbols().to_vec())),
            )
            .collect();
        let jobs: Vec<(usize, usize)> = (0..starts.len()).flat_map(|r| (0..n).map(move |k| (r, k))).collect();
        let cells: Vec<Result<TableCell, TableError>> = jobs
            .par_iter()
            .map(|&(r, k)| {
                let q = queries.get(k);
                match aligned_pair(&pair.p1, &pair.p2, q, &starts[r], epsilon) {
                    Ok((pmf1, pmf2)) => Ok(match QueryStats::from_pmfs(q.clone(), &pmf1, &pmf2) {
                        Ok(stats) => TableCell::Ready(Box::new(PairEntry { pmf1: Some(pmf1), pmf2: Some(pmf2), stats })),
                        Err(e) => TableCell::Excluded(e.to_string()),
                    }),
                    Err(PmfError::PatternImpossible(_)) => one_sided(pair, q, &starts[r], epsilon),
                    Err(e @ PmfError::HitNotCertain(_)) => Ok(TableCell::Excluded(e.to_string())),
                    Err(e) => Err(e.into()),
                }
            })
            .collect();
        let mut flat = cells.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
        let rows = (0..starts.len()).map(|_| flat.by_ref().take(n).collect()).collect();
        Ok(Self { queries, rows, memoryless, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn row(&self, prev: Option<usize>) -> &[TableCell] {
        match prev {
            Some(p) if !self.memoryless => &self.rows[p + 1],
            _ => &self.rows[0],
        }
    }

    pub fn cell(&self, prev: Option<usize>, next: usize) -> &TableCell {
        &self.row(prev)[next]
    }

    pub fn entry(&self, prev: Option<usize>, next: usize) -> Option<&PairEntry> {
        self.cell(prev, next).entry()
    }

    /// First-query statistics for every pattern, excluded ones dropped.
    pub fn initial_stats(&self) -> Vec<QueryStats> {
        self.rows[0].iter().filter_map(|c| c.entry().map(|e| e.stats.clone())).collect()
    }
}

/// Cell for a query that is impossible under at least one hypothesis.
fn one_sided(
    pair: &HypothesisPair,
    q: &QueryPattern,
    start: &StartContext,
    epsilon: f64,
) -> Result<TableCell, TableError> {
    let law = |src| match hit_time_pmf(src, q, start, epsilon, 0) {
        Ok(p) => Ok(Ok(p)),
        Err(e @ (PmfError::PatternImpossible(_) | PmfError::HitNotCertain(_))) => Ok(Err(e)),
        Err(e) => Err(e),
    };
    Ok(match (law(&pair.p1)?, law(&pair.p2)?) {
        (Ok(p1), Err(PmfError::PatternImpossible(_))) => decisive(q, Some(p1), None),
        (Err(PmfError::PatternImpossible(_)), Ok(p2)) => decisive(q, None, Some(p2)),
        (Err(e), _) | (_, Err(e)) => TableCell::Excluded(e.to_string()),
        (Ok(_), Ok(_)) => unreachable!("aligned_pair failed on a possible pattern"),
    })
}

fn decisive(q: &QueryPattern, pmf1: Option<HitTimePmf>, pmf2: Option<HitTimePmf>) -> TableCell {
    let mean = |p: &Option<HitTimePmf>| p.as_ref().map_or(f64::INFINITY, HitTimePmf::mean);
    let stats = QueryStats { pattern: q.clone(), kl: f64::INFINITY, e1: mean(&pmf1), e2: mean(&pmf2) };
    TableCell::Ready(Box::new(PairEntry { pmf1, pmf2, stats }))
}

impl HitModel for ExactTables {
    fn queries(&self) -> &QuerySet {
        &self.queries
    }

    fn stats(&self, prev: Option<usize>, next: usize) -> Option<&QueryStats> {
        self.entry(prev, next).map(|e| &e.stats)
    }

    fn posterior(&self, belief: Belief, prev: Option<usize>, next: usize, obs: &HitRecord) -> Belief {
        let Some(entry) = self.entry(prev, next) else {
            return belief;
        };
        let (l1, l2) = entry.likelihoods(obs);
        bayes_update(belief, l1, l2).unwrap_or(belief)
    }

    fn memoryless(&self) -> bool {
        self.memoryless
    }
}

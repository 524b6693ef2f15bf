//! Query selection: static, adaptive, random, and cyclic schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{argmax_lowest, efficiency_ratio, QueryStats};
use crate::patterns::QueryPattern;
use crate::tables::HitModel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("no admissible query")]
    EmptyCandidateSet,
    #[error("query graph has no cycle with finite weights")]
    NoFiniteCycle,
}

/// Highest efficiency ratio at belief `pi`; near-ties go to the
/// lexicographically smallest pattern.
pub fn optimal_static_query_iid(table: &[QueryStats], pi: f64) -> Result<&QueryStats, StrategyError> {
    best_by(table.iter(), |s| Some(efficiency_ratio(s, pi)).filter(|v| v.is_finite()))
}

/// One-step greedy choice at the current belief. Identical to the static
/// rule evaluated at `pi_k` instead of the prior.
pub fn adaptive_next_query(table: &[QueryStats], pi_k: f64) -> Result<&QueryStats, StrategyError> {
    optimal_static_query_iid(table, pi_k)
}

fn best_by<'a, I, F>(items: I, score: F) -> Result<&'a QueryStats, StrategyError>
where
    I: Iterator<Item = &'a QueryStats>,
    F: Fn(&QueryStats) -> Option<f64>,
{
    let mut items: Vec<&QueryStats> = items.collect();
    items.sort_by(|a, b| a.pattern.cmp(&b.pattern));
    let idx = argmax_lowest(items.iter().map(|s| score(s))).ok_or(StrategyError::EmptyCandidateSet)?;
    Ok(items[idx])
}

/// Static choice against a model: the query that is best when sent over
/// and over, i.e. scored on its self-transition statistics.
pub fn static_choice(model: &dyn HitModel, pi: f64) -> Result<usize, StrategyError> {
    choose(model, pi, |k| (Some(k), k))
}

/// Greedy choice given the previous query and the current belief.
pub fn adaptive_choice(model: &dyn HitModel, prev: Option<usize>, pi: f64) -> Result<usize, StrategyError> {
    choose(model, pi, |k| (prev, k))
}

/// Best finite efficiency ratio; failing that, the first decisive query.
fn choose(model: &dyn HitModel, pi: f64, edge: impl Fn(usize) -> (Option<usize>, usize)) -> Result<usize, StrategyError> {
    let n = model.queries().len();
    let stats = |k| {
        let (p, k) = edge(k);
        model.stats(p, k)
    };
    argmax_lowest((0..n).map(|k| stats(k).map(|s| efficiency_ratio(s, pi)).filter(|v| v.is_finite())))
        .or_else(|| (0..n).find(|&k| stats(k).is_some()))
        .ok_or(StrategyError::EmptyCandidateSet)
}

/// Uniform draw over admissible queries.
pub fn random_choice<R: Rng + ?Sized>(model: &dyn HitModel, rng: &mut R) -> Result<usize, StrategyError> {
    let admissible: Vec<usize> = (0..model.queries().len()).filter(|&k| model.stats(None, k).is_some()).collect();
    if admissible.is_empty() {
        return Err(StrategyError::EmptyCandidateSet);
    }
    Ok(admissible[rng.random_range(0..admissible.len())])
}

/// Edge weights between queries: `d[i][j]` is the divergence of query `j`
/// sent right after `i`, `t[i][j]` its belief-averaged expected hit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGraph {
    pub patterns: Vec<QueryPattern>,
    pub prior: f64,
    pub d: Vec<Vec<Option<f64>>>,
    pub t: Vec<Vec<Option<f64>>>,
}

impl QueryGraph {
    pub fn from_model(model: &dyn HitModel, prior: f64) -> Self {
        let n = model.queries().len();
        let mut d = vec![vec![None; n]; n];
        let mut t = vec![vec![None; n]; n];
        for i in 0..n {
            for j in 0..n {
                if let Some(s) = model.stats(Some(i), j) {
                    d[i][j] = Some(s.kl);
                    t[i][j] = Some(s.expected_time(prior));
                }
            }
        }
        Self { patterns: model.queries().iter().cloned().collect(), prior, d, t }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    fn edges(&self) -> Vec<(usize, usize, f64, f64)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if let (Some(d), Some(t)) = (self.d[i][j], self.t[i][j]) {
                    if d.is_finite() && t.is_finite() && t > 0.0 {
                        out.push((i, j, d, t));
                    }
                }
            }
        }
        out
    }

    /// `ΣD / Σt` along a closed walk, `None` if an edge is missing.
    pub fn cycle_ratio(&self, cycle: &[usize]) -> Option<f64> {
        let (mut d, mut t) = (0.0, 0.0);
        for (k, &i) in cycle.iter().enumerate() {
            let j = cycle[(k + 1) % cycle.len()];
            d += self.d[i][j]?;
            t += self.t[i][j]?;
        }
        (t > 0.0).then(|| d / t)
    }
}

/// A query schedule repeated forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclicStrategy {
    /// Node indices, rotated so the smallest comes first.
    pub cycle: Vec<usize>,
    pub patterns: Vec<QueryPattern>,
    /// Cycle ratio `ΣD / Σt`.
    pub mu: f64,
    pub total_d: f64,
    pub total_t: f64,
}

impl CyclicStrategy {
    fn new(graph: &QueryGraph, mut cycle: Vec<usize>) -> Self {
        let start = (0..cycle.len()).min_by_key(|&k| cycle[k]).unwrap_or(0);
        cycle.rotate_left(start);
        let (mut total_d, mut total_t) = (0.0, 0.0);
        for (k, &i) in cycle.iter().enumerate() {
            let j = cycle[(k + 1) % cycle.len()];
            total_d += graph.d[i][j].unwrap_or(f64::NAN);
            total_t += graph.t[i][j].unwrap_or(f64::NAN);
        }
        let patterns = cycle.iter().map(|&i| graph.patterns[i].clone()).collect();
        Self { cycle, patterns, mu: total_d / total_t, total_d, total_t }
    }

    pub fn is_self_loop(&self) -> bool {
        self.cycle.len() == 1
    }

    /// Query index to send at step `k` (0-based).
    pub fn at(&self, k: usize) -> usize {
        self.cycle[k % self.cycle.len()]
    }
}

const CYCLE_TOL: f64 = 1e-10;

/// Cycle maximizing `ΣD / Σt`.
///
/// Parametric search on `λ`: a cycle with ratio above `λ` exists iff the
/// weights `λ t − D` admit a negative cycle, which Bellman-Ford finds.
/// Every candidate cycle is re-scored exactly, so the returned ratio is the
/// ratio of an actual cycle. Self-loops win near-ties.
pub fn max_ratio_cycle(graph: &QueryGraph) -> Result<CyclicStrategy, StrategyError> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(StrategyError::NoFiniteCycle);
    }
    let n = graph.len();
    let best_loop = argmax_lowest((0..n).map(|i| graph.cycle_ratio(&[i]).filter(|r| r.is_finite())));
    let hi0 = edges.iter().map(|e| e.2 / e.3).fold(f64::NEG_INFINITY, f64::max);
    let lo0 = edges.iter().map(|e| e.2 / e.3).fold(f64::INFINITY, f64::min);

    let (mut best, mut lo) = match best_loop {
        Some(i) => (vec![i], graph.cycle_ratio(&[i]).unwrap()),
        None => {
            // any cycle at all
            let c = negative_cycle(n, &edges, lo0 - 1.0).ok_or(StrategyError::NoFiniteCycle)?;
            let r = graph.cycle_ratio(&c).ok_or(StrategyError::NoFiniteCycle)?;
            (c, r)
        }
    };
    let mut hi = hi0;
    while hi - lo > CYCLE_TOL * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        match negative_cycle(n, &edges, mid).and_then(|c| graph.cycle_ratio(&c).map(|r| (c, r))) {
            Some((c, r)) if r > mid => {
                lo = r;
                best = c;
            }
            _ => hi = mid,
        }
    }

    if let Some(i) = best_loop {
        let r = graph.cycle_ratio(&[i]).unwrap();
        let mu = graph.cycle_ratio(&best).unwrap();
        if r >= mu - CYCLE_TOL * mu.abs().max(1.0) {
            best = vec![i];
        }
    }
    Ok(CyclicStrategy::new(graph, best))
}

/// A cycle of negative total weight `λ t − D`, if Bellman-Ford finds one.
fn negative_cycle(n: usize, edges: &[(usize, usize, f64, f64)], lambda: f64) -> Option<Vec<usize>> {
    let mut dist = vec![0.0f64; n];
    let mut pred = vec![usize::MAX; n];
    let mut last = None;
    for _ in 0..=n {
        last = None;
        for &(u, v, d, t) in edges {
            let w = lambda * t - d;
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                pred[v] = u;
                last = Some(v);
            }
        }
        last?;
    }
    let mut x = last?;
    for _ in 0..n {
        x = *pred.get(x)?;
    }
    let mut cycle = vec![x];
    let mut y = *pred.get(x)?;
    while y != x {
        if cycle.len() > n {
            return None;
        }
        cycle.push(y);
        y = *pred.get(y)?;
    }
    // pred links walk backwards
    cycle.reverse();
    Some(cycle)
}

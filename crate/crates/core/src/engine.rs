//! Sequential test driver and batch experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{check_threshold, decide, Belief, Decision, InferenceError};
use crate::patterns::{stream_hit, HitRecord, QueryPattern, QuerySet};
use crate::sources::{draw_switch, Hypothesis, HypothesisPair, StreamCursor};
use crate::strategy::{
    adaptive_choice, max_ratio_cycle, random_choice, static_choice, CyclicStrategy, QueryGraph, StrategyError,
};
use crate::tables::{ExactTables, HitModel, TableError};

pub const DEFAULT_EPS_T: f64 = 0.01;
pub const DEFAULT_MAX_SYMBOLS: u64 = 20;
pub const DEFAULT_MAX_QUERIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    StaticOptimal,
    CyclicOptimal,
    AdaptiveGreedy,
    RandomChoice,
    FixedQuery(QueryPattern),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::StaticOptimal => "static".into(),
            Policy::CyclicOptimal => "cyclic".into(),
            Policy::AdaptiveGreedy => "adaptive".into(),
            Policy::RandomChoice => "random".into(),
            Policy::FixedQuery(q) => format!("fixed:{q}"),
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Policy::StaticOptimal),
            "cyclic" => Ok(Policy::CyclicOptimal),
            "adaptive" => Ok(Policy::AdaptiveGreedy),
            "random" => Ok(Policy::RandomChoice),
            _ => match s.strip_prefix("fixed:") {
                Some(p) => p.parse().map(Policy::FixedQuery).map_err(|e| format!("{e}")),
                None => Err(format!("unknown policy {s:?}; expected static, cyclic, adaptive, random or fixed:<pattern>")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub pair: HypothesisPair,
    pub policy: Policy,
    pub eps_t: f64,
    pub max_queries: usize,
    /// Observation budget in source symbols.
    pub max_symbols: u64,
}

impl TestConfig {
    pub fn new(pair: HypothesisPair, policy: Policy) -> Self {
        Self { pair, policy, eps_t: DEFAULT_EPS_T, max_queries: DEFAULT_MAX_QUERIES, max_symbols: DEFAULT_MAX_SYMBOLS }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        check_threshold(self.eps_t)?;
        if self.max_queries == 0 || self.max_symbols == 0 {
            return Err(EngineError::Config("budgets must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Threshold,
    QueryBudget,
    SymbolBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub decision: Hypothesis,
    pub truth: Hypothesis,
    pub belief_trajectory: Vec<f64>,
    pub queries_sent: Vec<QueryPattern>,
    pub hit_times: Vec<HitRecord>,
    pub total_symbols: u64,
    pub stopped_by: StopReason,
}

impl TestOutcome {
    pub fn correct(&self) -> bool {
        self.decision == self.truth
    }

    /// `ln(L2 / L1)` of everything observed, recovered from the belief
    /// trajectory. Exact as long as no belief was clamped.
    pub fn log_likelihood_ratio_21(&self) -> f64 {
        let logit = |p: f64| p.ln() - (1.0 - p).ln();
        let first = self.belief_trajectory[0];
        let last = *self.belief_trajectory.last().unwrap();
        logit(first) - logit(last)
    }
}

/// Per-run query selection, with anything expensive computed up front.
#[derive(Debug, Clone)]
pub enum Planner {
    Fixed(usize),
    Cycle(CyclicStrategy),
    Adaptive,
    Random,
}

impl Planner {
    pub fn new(model: &dyn HitModel, policy: &Policy, prior: f64) -> Result<Self, EngineError> {
        Ok(match policy {
            Policy::StaticOptimal => Planner::Fixed(static_choice(model, prior)?),
            Policy::CyclicOptimal => Planner::Cycle(max_ratio_cycle(&QueryGraph::from_model(model, prior))?),
            Policy::AdaptiveGreedy => Planner::Adaptive,
            Policy::RandomChoice => Planner::Random,
            Policy::FixedQuery(q) => {
                let k = model
                    .queries()
                    .index_of(q)
                    .ok_or_else(|| EngineError::Config(format!("query {q} is not in the query set")))?;
                if model.stats(None, k).is_none() {
                    return Err(EngineError::Strategy(StrategyError::EmptyCandidateSet));
                }
                Planner::Fixed(k)
            }
        })
    }

    fn next<R: Rng + ?Sized>(
        &self,
        model: &dyn HitModel,
        step: usize,
        prev: Option<usize>,
        belief: Belief,
        rng: &mut R,
    ) -> Result<usize, EngineError> {
        Ok(match self {
            Planner::Fixed(k) => *k,
            Planner::Cycle(c) => c.at(step),
            Planner::Adaptive => adaptive_choice(model, prev, belief.value())?,
            Planner::Random => random_choice(model, rng)?,
        })
    }
}

/// One sequential test. The source stream and the policy draw from
/// separate substreams of `rng`, so two policies run with the same seed see
/// the same truth and the same source symbols.
pub fn run_test<R: Rng + ?Sized>(
    config: &TestConfig,
    model: &dyn HitModel,
    rng: &mut R,
) -> Result<TestOutcome, EngineError> {
    config.validate()?;
    let planner = Planner::new(model, &config.policy, config.pair.prior)?;
    run_planned(config, model, &planner, rng)
}

pub fn run_planned<R: Rng + ?Sized>(
    config: &TestConfig,
    model: &dyn HitModel,
    planner: &Planner,
    rng: &mut R,
) -> Result<TestOutcome, EngineError> {
    let truth = draw_switch(config.pair.prior, rng);
    let mut src_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut policy_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut cursor = StreamCursor::new(config.pair.source(truth), &mut src_rng).with_budget(config.max_symbols);

    let mut belief = Belief::prior(config.pair.prior);
    let mut trajectory = vec![belief.value()];
    let mut queries_sent = Vec::new();
    let mut hit_times = Vec::new();
    let mut prev = None;

    let (decision, stopped_by) = loop {
        match decide(belief, config.eps_t) {
            Decision::Declare1 => break (Hypothesis::One, StopReason::Threshold),
            Decision::Declare2 => break (Hypothesis::Two, StopReason::Threshold),
            Decision::Continue => {}
        }
        let forced = if belief.value() >= 0.5 { Hypothesis::One } else { Hypothesis::Two };
        if queries_sent.len() >= config.max_queries {
            break (forced, StopReason::QueryBudget);
        }
        if cursor.is_exhausted() {
            break (forced, StopReason::SymbolBudget);
        }
        let k = planner.next(model, queries_sent.len(), prev, belief, &mut policy_rng)?;
        let q = model.queries().get(k);
        let hit = stream_hit(&mut cursor, q, &mut src_rng);
        belief = model.posterior(belief, prev, k, &hit);
        trajectory.push(belief.value());
        queries_sent.push(q.clone());
        hit_times.push(hit);
        prev = Some(k);
    };

    Ok(TestOutcome {
        decision,
        truth,
        belief_trajectory: trajectory,
        queries_sent,
        hit_times,
        total_symbols: cursor.t(),
        stopped_by,
    })
}

/// Recomputes a belief trajectory from the queries and responses alone.
pub fn replay_beliefs(model: &dyn HitModel, prior: f64, queries: &[QueryPattern], hits: &[HitRecord]) -> Vec<f64> {
    let mut belief = Belief::prior(prior);
    let mut out = vec![belief.value()];
    let mut prev = None;
    for (q, h) in queries.iter().zip(hits) {
        let k = model.queries().index_of(q).expect("query from this model");
        belief = model.posterior(belief, prev, k, h);
        out.push(belief.value());
        prev = Some(k);
    }
    out
}

/// Counters over a set of runs; all rates derive from these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub runs: usize,
    pub truth1: usize,
    pub truth2: usize,
    /// Truth 1, decided 2.
    pub errors1: usize,
    /// Truth 2, decided 1.
    pub errors2: usize,
    pub total_symbols: u64,
    pub total_queries: u64,
    /// Sum over truth-1 runs that decided 1 of the likelihood ratio L2/L1;
    /// divided by `truth1` this estimates β by importance sampling.
    pub lr_weighted_errors2: f64,
    pub mu_star: Option<f64>,
}

impl BatchMetrics {
    fn record(&mut self, o: &TestOutcome) {
        self.runs += 1;
        self.total_symbols += o.total_symbols;
        self.total_queries += o.queries_sent.len() as u64;
        match o.truth {
            Hypothesis::One => {
                self.truth1 += 1;
                if o.decision == Hypothesis::Two {
                    self.errors1 += 1;
                } else {
                    self.lr_weighted_errors2 += o.log_likelihood_ratio_21().exp();
                }
            }
            Hypothesis::Two => {
                self.truth2 += 1;
                if o.decision == Hypothesis::One {
                    self.errors2 += 1;
                }
            }
        }
    }

    pub fn correct(&self) -> usize {
        self.runs - self.errors1 - self.errors2
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.runs as f64
    }

    /// Type I rate `P1(decide 2)`; NaN without truth-1 runs.
    pub fn alpha(&self) -> f64 {
        self.errors1 as f64 / self.truth1 as f64
    }

    /// Type II rate `P2(decide 1)`; NaN without truth-2 runs.
    pub fn beta(&self) -> f64 {
        self.errors2 as f64 / self.truth2 as f64
    }

    pub fn beta_importance(&self) -> f64 {
        self.lr_weighted_errors2 / self.truth1 as f64
    }

    /// Accuracy with the two hypotheses weighted by the prior rather than
    /// by how often each was drawn.
    pub fn weighted_accuracy(&self, prior: f64) -> f64 {
        let a = if self.truth1 > 0 { self.alpha() } else { 0.0 };
        let b = if self.truth2 > 0 { self.beta() } else { 0.0 };
        1.0 - (prior * a + (1.0 - prior) * b)
    }

    pub fn mean_symbols(&self) -> f64 {
        self.total_symbols as f64 / self.runs as f64
    }

    pub fn mean_queries(&self) -> f64 {
        self.total_queries as f64 / self.runs as f64
    }
}

/// One cell of a batch: a configuration and the model its tests consult.
pub struct BatchCell<'a> {
    pub config: TestConfig,
    pub model: &'a dyn HitModel,
}

/// Runs `runs` tests per cell in parallel. Run `r` of cell `c` uses
/// `ChaCha8Rng` seeded with `seed` on stream `c * runs + r`, so results do
/// not depend on scheduling.
pub fn run_batch(cells: &[BatchCell<'_>], runs: usize, seed: u64) -> Result<Vec<BatchMetrics>, EngineError> {
    if runs == 0 {
        return Err(EngineError::Config("runs per cell must be at least 1".into()));
    }
    let planners = cells
        .iter()
        .map(|c| {
            c.config.validate()?;
            Planner::new(c.model, &c.config.policy, c.config.pair.prior)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let outcomes: Vec<Result<TestOutcome, EngineError>> = (0..cells.len() * runs)
        .into_par_iter()
        .map(|i| {
            let c = i / runs;
            let mut rng = run_rng(seed, i as u64);
            run_planned(&cells[c].config, cells[c].model, &planners[c], &mut rng)
        })
        .collect();
    let mut metrics = vec![BatchMetrics::default(); cells.len()];
    for (i, o) in outcomes.into_iter().enumerate() {
        metrics[i / runs].record(&o?);
    }
    Ok(metrics)
}

pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Theoretical error exponent of a source pair and the cycle attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentDiagnostic {
    pub mu_star: f64,
    pub cycle: CyclicStrategy,
    pub graph: QueryGraph,
}

pub fn exponent_diagnostic(pair: &HypothesisPair, m: usize, epsilon: f64) -> Result<ExponentDiagnostic, EngineError> {
    let queries = QuerySet::all(pair.alphabet(), m).map_err(|e| EngineError::Config(e.to_string()))?;
    let tables = ExactTables::build(pair, queries, epsilon)?;
    let graph = QueryGraph::from_model(&tables, pair.prior);
    let cycle = max_ratio_cycle(&graph)?;
    Ok(ExponentDiagnostic { mu_star: cycle.mu, cycle, graph })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hitpmf::DEFAULT_EPSILON;
    use crate::inference::efficiency_ratio;
    use crate::sources::{make_bernoulli, make_iid, make_markov_persistent};

    fn iid_pair(a: f64, b: f64, prior: f64) -> HypothesisPair {
        HypothesisPair::new(make_bernoulli(a).unwrap(), make_bernoulli(b).unwrap(), prior).unwrap()
    }

    fn tables(pair: &HypothesisPair, m: usize) -> ExactTables {
        ExactTables::build(pair, QuerySet::all(pair.alphabet(), m).unwrap(), DEFAULT_EPSILON).unwrap()
    }

    #[test]
    fn disjoint_supports_decide_in_one_query() {
        let pair =
            HypothesisPair::new(make_iid(&[1.0, 0.0]).unwrap(), make_iid(&[0.0, 1.0]).unwrap(), 0.5).unwrap();
        let t = tables(&pair, 1);
        for policy in [Policy::AdaptiveGreedy, Policy::StaticOptimal, Policy::RandomChoice] {
            for seed in 0..20 {
                let cfg = TestConfig::new(pair.clone(), policy.clone());
                let o = run_test(&cfg, &t, &mut run_rng(seed, 0)).unwrap();
                assert!(o.correct());
                assert_eq!(o.queries_sent.len(), 1);
                assert_eq!(o.stopped_by, StopReason::Threshold);
            }
        }
    }

    #[test]
    fn confident_prior_decides_without_queries() {
        let pair = iid_pair(0.3, 0.7, 0.999);
        let o = run_test(&TestConfig::new(pair.clone(), Policy::AdaptiveGreedy), &tables(&pair, 2), &mut run_rng(1, 0))
            .unwrap();
        assert_eq!(o.decision, Hypothesis::One);
        assert!(o.queries_sent.is_empty());
        assert_eq!(o.belief_trajectory.len(), 1);
    }

    #[test]
    fn trajectory_matches_scripted_bayes() {
        let pair = iid_pair(0.4, 0.6, 0.5);
        let t = tables(&pair, 3);
        let mut cfg = TestConfig::new(pair, Policy::AdaptiveGreedy);
        cfg.max_symbols = 10_000;
        cfg.max_queries = 1000;
        let o = run_test(&cfg, &t, &mut run_rng(42, 0)).unwrap();
        assert_eq!(o.belief_trajectory.len(), o.queries_sent.len() + 1);
        assert!(o.queries_sent.len() > 2);

        // re-derive each choice from the ratios at the running belief and
        // each update from plain Bayes on the exact laws
        let mut pi = 0.5f64;
        for (q, h) in o.queries_sent.iter().zip(&o.hit_times) {
            let best = (0..8)
                .max_by(|&a, &b| {
                    let na = efficiency_ratio(t.stats(None, a).unwrap(), pi);
                    let nb = efficiency_ratio(t.stats(None, b).unwrap(), pi);
                    na.partial_cmp(&nb).unwrap().then(b.cmp(&a))
                })
                .unwrap();
            assert_eq!(t.queries().get(best), q);
            let e = t.entry(None, best).unwrap();
            let (l1, l2) = (e.pmf1.as_ref().unwrap().prob(h.delta_t), e.pmf2.as_ref().unwrap().prob(h.delta_t));
            pi = pi * l1 / (pi * l1 + (1.0 - pi) * l2);
        }
        assert!((pi - o.belief_trajectory.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic_and_replayable() {
        let pair = HypothesisPair::new(make_markov_persistent(0.2).unwrap(), make_markov_persistent(0.7).unwrap(), 0.5)
            .unwrap();
        let t = tables(&pair, 2);
        for policy in [Policy::AdaptiveGreedy, Policy::CyclicOptimal, Policy::RandomChoice] {
            let cfg = TestConfig::new(pair.clone(), policy);
            let a = run_test(&cfg, &t, &mut run_rng(9, 3)).unwrap();
            let b = run_test(&cfg, &t, &mut run_rng(9, 3)).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(replay_beliefs(&t, 0.5, &a.queries_sent, &a.hit_times), a.belief_trajectory);
            assert!(a.total_symbols <= cfg.max_symbols);
        }
    }

    #[test]
    fn batch_counters_are_consistent() {
        let pair = iid_pair(0.3, 0.6, 0.5);
        let t = tables(&pair, 2);
        let cells = [BatchCell { config: TestConfig::new(pair, Policy::StaticOptimal), model: &t }];
        let m = run_batch(&cells, 300, 5).unwrap().remove(0);
        assert_eq!(m.runs, 300);
        assert_eq!(m.truth1 + m.truth2, 300);
        let identity = 1.0 - (m.truth1 as f64 * m.alpha() + m.truth2 as f64 * m.beta()) / 300.0;
        assert!((m.accuracy() - identity).abs() < 1e-12);
        assert_eq!(run_batch(&cells, 300, 5).unwrap()[0], m);
        assert!(m.mean_symbols() <= 20.0);
    }

    #[test]
    fn equal_sources_have_zero_exponent() {
        let d = exponent_diagnostic(&iid_pair(0.4, 0.4, 0.5), 2, DEFAULT_EPSILON).unwrap();
        assert_eq!(d.mu_star, 0.0);
    }

    #[test]
    fn iid_exponent_is_best_static_ratio() {
        let pair = iid_pair(0.3, 0.7, 0.5);
        let d = exponent_diagnostic(&pair, 3, DEFAULT_EPSILON).unwrap();
        let t = tables(&pair, 3);
        let best = (0..8).map(|k| efficiency_ratio(t.stats(None, k).unwrap(), 0.5)).fold(f64::MIN, f64::max);
        assert!(d.cycle.is_self_loop());
        assert!((d.mu_star - best).abs() < 1e-9);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in ["static", "cyclic", "adaptive", "random", "fixed:0110"] {
            assert_eq!(p.parse::<Policy>().unwrap().name(), p);
        }
        assert!("greedy".parse::<Policy>().is_err());
    }
}

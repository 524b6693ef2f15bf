//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Run with `cargo test -p qh-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use qh_core::engine::{run_batch, run_rng, run_test, BatchCell, BatchMetrics, Policy, TestConfig};
use qh_core::estimation::{estimate_expected_hit_time, estimate_kl, EmpiricalHitModel};
use qh_core::hitpmf::{aligned_pair, hit_time_pmf, hit_time_pmf_iid, HitTimePmf, StartContext};
use qh_core::inference::{bayes_update, efficiency_ratio, general_prior_posterior, kl_divergence, Belief};
use qh_core::patterns::{stream_hit, QueryPattern, QuerySet};
use qh_core::sources::{
    make_bernoulli, make_markov_persistent, Hypothesis, HypothesisPair, MarkovKernel, SourceModel,
    StreamCursor, Symbol,
};
use qh_core::strategy::{max_ratio_cycle, optimal_static_query_iid, QueryGraph};
use qh_core::tables::{ExactTables, HitModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEED: u64 = 20_240_601;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn bern(p: f64) -> SourceModel {
    make_bernoulli(p).unwrap()
}

fn all_patterns(max_m: usize) -> Vec<QueryPattern> {
    (1..=max_m).flat_map(|m| QuerySet::all(2, m).unwrap().iter().cloned().collect::<Vec<_>>()).collect()
}

// 1 ------------------------------------------------------------------------

/// Exhaustive count of binary strings by (first-hit time, number of ones),
/// found by depth-first enumeration with a naive suffix check.
fn enumerate_first_hits(pattern: &[u8], max_len: usize) -> Vec<Vec<u64>> {
    fn dfs(buf: &mut Vec<u8>, ones: usize, pattern: &[u8], max_len: usize, out: &mut [Vec<u64>]) {
        let t = buf.len();
        if t >= pattern.len() && buf[t - pattern.len()..] == *pattern {
            out[t][ones] += 1;
            return;
        }
        if t == max_len {
            return;
        }
        for s in [0u8, 1] {
            buf.push(s);
            dfs(buf, ones + s as usize, pattern, max_len, out);
            buf.pop();
        }
    }
    let mut out = vec![vec![0u64; max_len + 1]; max_len + 1];
    dfs(&mut Vec::with_capacity(max_len), 0, pattern, max_len, &mut out);
    out
}

fn criterion_1() -> Outcome {
    const LEN: usize = 24;
    let patterns = all_patterns(4);
    let errors: Vec<f64> = patterns
        .par_iter()
        .map(|q| {
            let raw: Vec<u8> = q.symbols().iter().map(|s| s.0).collect();
            let counts = enumerate_first_hits(&raw, LEN);
            let mut worst = 0.0f64;
            for p in grid() {
                let pmf = hit_time_pmf_iid(q, &[1.0 - p, p], 1e-11).unwrap();
                for (t, row) in counts.iter().enumerate().skip(1) {
                    let exact: f64 = row[..=t]
                        .iter()
                        .enumerate()
                        .map(|(k, &c)| c as f64 * p.powi(k as i32) * (1.0 - p).powi((t - k) as i32))
                        .sum();
                    worst = worst.max((pmf.prob(t as u64) - exact).abs());
                }
            }
            worst
        })
        .collect();
    let max_err = errors.iter().copied().fold(0.0, f64::max);
    let kac = grid()
        .iter()
        .map(|&p| (hit_time_pmf_iid(&"1".parse().unwrap(), &[1.0 - p, p], 1e-11).unwrap().mean() - 1.0 / p).abs())
        .fold(0.0, f64::max);
    check(
        max_err <= 1e-10 && kac <= 1e-6,
        format!("{} patterns x 9 probabilities, max |dp - enumeration| = {max_err:.2e}, max Kac error = {kac:.2e}", patterns.len()),
    )
}

// 2 ------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for inst in 0..10 {
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let a = rng.random_range(0.1..0.9);
                vec![a, 1.0 - a]
            })
            .collect();
        let model = SourceModel::Markov(MarkovKernel::new(2, 1, rows).unwrap());
        let m = rng.random_range(1..=3usize);
        let q = QueryPattern::new((0..m).map(|_| Symbol(rng.random_range(0..2u8))).collect()).unwrap();
        let start = if inst % 2 == 0 { StartContext::Context(rng.random_range(0..2)) } else { StartContext::Initial };
        let pmf = hit_time_pmf(&model, &q, &start, 1e-9, 0).unwrap();

        let chunks = 16;
        let hist: Vec<u64> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut r = run_rng(SEED + 200 + inst, c as u64);
                let mut h = vec![0u64; pmf.t_max() + 2];
                for _ in 0..SAMPLES / chunks {
                    let mut cur = match start {
                        StartContext::Context(ctx) => StreamCursor::with_context(&model, ctx),
                        _ => StreamCursor::new(&model, &mut r),
                    };
                    let hit = stream_hit(&mut cur, &q, &mut r);
                    let t = (hit.delta_t as usize).min(pmf.t_max() + 1);
                    h[t] += 1;
                }
                h
            })
            .reduce(|| vec![0u64; pmf.t_max() + 2], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
        let n = SAMPLES as f64;
        let mut tv = 0.0;
        for (t, &c) in hist.iter().enumerate().skip(1) {
            let p = if t <= pmf.t_max() { pmf.prob(t as u64) } else { 0.0 };
            tv += (c as f64 / n - p).abs();
        }
        tv *= 0.5;
        worst = worst.max(tv);
        lines.push(format!("{q}:{tv:.4}"));
    }
    check(worst <= 0.01, format!("10 instances, max TV = {worst:.4} [{}]", lines.join(" ")))
}

// 3 ------------------------------------------------------------------------

fn max_diff(a: &HitTimePmf, b: &HitTimePmf) -> f64 {
    if a.t_max() != b.t_max() {
        return f64::INFINITY;
    }
    a.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let mut rev = 0.0f64;
    let mut comp = 0.0f64;
    let mut bitwise = 0usize;
    let mut total = 0usize;
    for q in all_patterns(4) {
        for p in grid() {
            let law = [1.0 - p, p];
            let swapped = [p, 1.0 - p];
            let base = hit_time_pmf_iid(&q, &law, 1e-9).unwrap();
            let r = hit_time_pmf_iid(&q.reversed(), &law, 1e-9).unwrap();
            let c = hit_time_pmf_iid(&q.complemented(), &swapped, 1e-9).unwrap();
            rev = rev.max(max_diff(&base, &r));
            comp = comp.max(max_diff(&base, &c));
            total += 2;
            bitwise += (base.probs() == r.probs()) as usize + (base.probs() == c.probs()) as usize;
        }
    }
    let tables = ExactTables::build(
        &HypothesisPair::new(bern(0.3), bern(0.7), 0.5).unwrap(),
        QuerySet::all(2, 4).unwrap(),
        1e-9,
    )
    .unwrap();
    let s = |p: &str| tables.stats(None, tables.queries().index_of(&p.parse().unwrap()).unwrap()).unwrap().clone();
    let (a, b) = (s("1110"), s("0111"));
    let pair_gap = (a.kl - b.kl).abs().max((a.e1 - b.e1).abs()).max((a.e2 - b.e2).abs());
    check(
        rev <= 1e-12 && comp <= 1e-12 && pair_gap <= 1e-12,
        format!(
            "m <= 4 x 9 probabilities: reversal max diff {rev:.1e}, complement max diff {comp:.1e} \
             ({bitwise}/{total} bit-identical); 1110 vs 0111 stats gap {pair_gap:.1e}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn brute_force_cycle(g: &QueryGraph) -> Option<f64> {
    fn ratio(g: &QueryGraph, c: &[usize]) -> Option<f64> {
        let (mut d, mut t) = (0.0, 0.0);
        for k in 0..c.len() {
            let (i, j) = (c[k], c[(k + 1) % c.len()]);
            d += g.d[i][j]?;
            t += g.t[i][j]?;
        }
        Some(d / t)
    }
    fn extend(g: &QueryGraph, path: &mut Vec<usize>, best: &mut Option<f64>) {
        if let Some(r) = ratio(g, path) {
            *best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
        let last = *path.last().unwrap();
        for j in path[0] + 1..g.len() {
            if !path.contains(&j) && g.d[last][j].is_some() {
                path.push(j);
                extend(g, path, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    for s in 0..g.len() {
        extend(g, &mut vec![s], &mut best);
    }
    best
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut random_worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=8usize);
        let patterns = QuerySet::all(2, 3).unwrap().iter().take(n).cloned().collect();
        let mut cell = |lo: f64, hi: f64| (0..n).map(|_| (0..n).map(|_| Some(rng.random_range(lo..hi))).collect()).collect();
        let d = cell(0.0, 2.0);
        let t = cell(1.0, 20.0);
        let g = QueryGraph { patterns, prior: 0.5, d, t };
        let got = max_ratio_cycle(&g).map_err(|e| e.to_string())?;
        let want = brute_force_cycle(&g).unwrap();
        random_worst = random_worst.max((got.mu - want).abs());
    }

    let mut markov_worst = 0.0f64;
    let mut markov_graphs = 0;
    let mut pairs: Vec<HypothesisPair> = [(0.2, 0.7), (0.5, 0.9), (0.1, 0.9)]
        .iter()
        .map(|&(a, b)| HypothesisPair::new(make_markov_persistent(a).unwrap(), make_markov_persistent(b).unwrap(), 0.4).unwrap())
        .collect();
    for _ in 0..3 {
        let mut kernel = || {
            let rows = (0..2).map(|_| {
                let a = rng.random_range(0.1..0.9);
                vec![a, 1.0 - a]
            });
            SourceModel::Markov(MarkovKernel::new(2, 1, rows.collect()).unwrap())
        };
        let (a, b) = (kernel(), kernel());
        pairs.push(HypothesisPair::new(a, b, rng.random_range(0.1..0.9)).unwrap());
    }
    for pair in &pairs {
        for m in 1..=3 {
            let tab = ExactTables::build(pair, QuerySet::all(2, m).unwrap(), 1e-9).map_err(|e| e.to_string())?;
            let g = QueryGraph::from_model(&tab, pair.prior);
            let got = max_ratio_cycle(&g).map_err(|e| format!("markov pair {markov_graphs}, m={m}: {e}"))?;
            let want = brute_force_cycle(&g).unwrap();
            markov_worst = markov_worst.max((got.mu - want).abs());
            markov_graphs += 1;
        }
    }

    let mut iid_worst = 0.0f64;
    let mut all_loops = true;
    for (a, b, prior) in [(0.3, 0.7, 0.5), (0.2, 0.6, 0.3), (0.8, 0.4, 0.7), (0.5, 0.55, 0.5)] {
        let pair = HypothesisPair::new(bern(a), bern(b), prior).unwrap();
        for m in 1..=4 {
            let tab = ExactTables::build(&pair, QuerySet::all(2, m).unwrap(), 1e-9).unwrap();
            let c = max_ratio_cycle(&QueryGraph::from_model(&tab, prior)).map_err(|e| e.to_string())?;
            let best = (0..tab.queries().len())
                .map(|k| efficiency_ratio(tab.stats(None, k).unwrap(), prior))
                .fold(f64::MIN, f64::max);
            all_loops &= c.is_self_loop();
            iid_worst = iid_worst.max((c.mu - best).abs());
        }
    }
    check(
        random_worst <= 1e-8 && markov_worst <= 1e-8 && iid_worst <= 1e-9 && all_loops,
        format!(
            "200 random graphs max |dmu| {random_worst:.1e}; {markov_graphs} markov graphs max |dmu| {markov_worst:.1e}; \
             iid graphs self-loops: {all_loops}, max |mu - max nu| {iid_worst:.1e}"
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let pair = HypothesisPair::new(bern(0.3), bern(0.7), 0.5).unwrap();
    let tab = ExactTables::build(&pair, QuerySet::all(2, 4).unwrap(), 1e-9).unwrap();
    let stats = tab.initial_stats();
    let mut bad = Vec::new();
    let mut seen_low = std::collections::BTreeSet::new();
    let mut seen_high = std::collections::BTreeSet::new();
    for i in 1..100 {
        let pi = i as f64 / 100.0;
        if i == 50 {
            continue;
        }
        let q = optimal_static_query_iid(&stats, pi).map_err(|e| e.to_string())?.pattern.to_string();
        let allowed: &[&str] = if pi < 0.5 { &["0111", "1110"] } else { &["0001", "1000"] };
        if !allowed.contains(&q.as_str()) {
            bad.push(format!("pi={pi}:{q}"));
        }
        if pi < 0.5 { &mut seen_low } else { &mut seen_high }.insert(q);
    }
    check(
        bad.is_empty(),
        format!(
            "pi < 0.5 -> {:?}, pi > 0.5 -> {:?} (ties go to the smaller pattern){}",
            seen_low,
            seen_high,
            if bad.is_empty() {
                String::new()
            } else {
                format!("; {} of 98 grid points differ, e.g. {}", bad.len(), [&bad[0], &bad[bad.len() - 1]].map(String::as_str).join(", "))
            }
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut worst_gp = 0.0f64;
    for _ in 0..1000 {
        let (l1, l2) = (rng.random_range(1e-6..1.0), rng.random_range(1e-6..1.0));
        let s = rng.random_range(0.001..0.999);
        let direct = bayes_update(Belief::prior(s), l1, l2).unwrap().value();
        let via = general_prior_posterior(l1 / (l1 + l2), s);
        worst_gp = worst_gp.max((via - direct).abs() / direct);
    }
    let mut worst_order = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..12);
        let obs: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0))).collect();
        let pi0 = rng.random_range(0.05..0.95);
        let mut b = Belief::prior(pi0);
        for &(a, c) in &obs {
            b = bayes_update(b, a, c).unwrap();
        }
        let lr: f64 = obs.iter().map(|(a, c)| a / c).product();
        let closed = pi0 * lr / (pi0 * lr + 1.0 - pi0);
        let mut shuffled = obs.clone();
        shuffled.reverse();
        let mut b2 = Belief::prior(pi0);
        for &(a, c) in &shuffled {
            b2 = bayes_update(b2, a, c).unwrap();
        }
        worst_order = worst_order
            .max((b.value() - closed).abs() / closed)
            .max((b2.value() - closed).abs() / closed);
    }
    check(
        worst_gp <= 1e-9 && worst_order <= 1e-9,
        format!("1000 instances: general-prior rel err {worst_gp:.1e}; order independence rel err {worst_order:.1e}"),
    )
}

// 7, 8 -----------------------------------------------------------------------

struct Heatmap {
    policy: Policy,
    cells: Vec<((f64, f64), BatchMetrics)>,
}

fn heatmap(make: impl Fn(f64) -> SourceModel, m: usize, max_symbols: u64, seed: u64) -> Result<Vec<Heatmap>, String> {
    let mut tables = Vec::new();
    for &a in &grid() {
        for &b in &grid() {
            let pair = HypothesisPair::new(make(a), make(b), 0.5).unwrap();
            let tab = ExactTables::build(&pair, QuerySet::all(2, m).unwrap(), 1e-6).map_err(|e| e.to_string())?;
            tables.push(((a, b), pair, tab));
        }
    }
    [Policy::AdaptiveGreedy, Policy::StaticOptimal, Policy::RandomChoice]
        .into_iter()
        .map(|policy| {
            let cells: Vec<BatchCell> = tables
                .iter()
                .map(|(_, pair, tab)| {
                    let mut config = TestConfig::new(pair.clone(), policy.clone());
                    config.max_symbols = max_symbols;
                    config.max_queries = 10;
                    BatchCell { config, model: tab }
                })
                .collect();
            let metrics = run_batch(&cells, 400, seed).map_err(|e| e.to_string())?;
            Ok(Heatmap { policy, cells: tables.iter().map(|t| t.0).zip(metrics).collect() })
        })
        .collect()
}

fn mean_accuracy(h: &Heatmap, off_diagonal: bool) -> f64 {
    let v: Vec<f64> = h.cells.iter().filter(|((a, b), _)| !off_diagonal || a != b).map(|(_, m)| m.accuracy()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7() -> Outcome {
    let maps = heatmap(bern, 3, 20, SEED + 7)?;
    let mut diag_bad = Vec::new();
    let mut diag_range = (1.0f64, 0.0f64);
    for h in &maps {
        for ((a, b), m) in &h.cells {
            if a == b {
                let acc = m.accuracy();
                diag_range = (diag_range.0.min(acc), diag_range.1.max(acc));
                if (acc - 0.5).abs() > 0.06 {
                    diag_bad.push(format!("{}@{a}:{acc:.3}", h.policy.name()));
                }
            }
        }
    }
    let [ad, st, rc] = [0, 1, 2].map(|i| mean_accuracy(&maps[i], false));
    check(
        diag_bad.is_empty() && ad >= st - 0.02 && st - 0.02 >= rc,
        format!(
            "mean accuracy adaptive {ad:.4}, static {st:.4}, random {rc:.4}; diagonal range [{:.3}, {:.3}]{}",
            diag_range.0,
            diag_range.1,
            if diag_bad.is_empty() { String::new() } else { format!("; out of band {diag_bad:?}") }
        ),
    )
}

/// Accuracy of the MAP test that sees all `n` symbols of both persistent
/// chains directly (the flip count is sufficient), averaged off-diagonal.
fn full_observation_ceiling(n: u32) -> f64 {
    let binom = |k: u32| (0..k).fold(1.0, |acc, i| acc * (n - 1 - i) as f64 / (i + 1) as f64);
    let law = |stay: f64| (0..n).map(|k| binom(k) * (1.0 - stay).powi(k as i32) * stay.powi((n - 1 - k) as i32)).collect::<Vec<_>>();
    let stays: Vec<f64> = grid().iter().map(|p| 0.9 + 0.1 * p).collect();
    let mut total = 0.0;
    let mut cells = 0;
    for (i, &a) in stays.iter().enumerate() {
        for (j, &b) in stays.iter().enumerate() {
            if i != j {
                total += 0.5 * law(a).iter().zip(law(b)).map(|(x, y)| x.max(y)).sum::<f64>();
                cells += 1;
            }
        }
    }
    total / cells as f64
}

fn criterion_8() -> Outcome {
    let maps = heatmap(|p| make_markov_persistent(p).unwrap(), 3, 10, SEED + 8)?;
    let [ad, st, rc] = [0, 1, 2].map(|i| mean_accuracy(&maps[i], true));
    check(
        ad - rc >= 0.05 && st - rc >= 0.05,
        format!(
            "off-diagonal mean accuracy adaptive {ad:.4}, static {st:.4}, random {rc:.4}; \
             ceiling with all 10 symbols observed {:.4}",
            full_observation_ceiling(10)
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn synth(model: &SourceModel, n: usize, seed: u64) -> Vec<Symbol> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut c = model.cursor(&mut r);
    (0..n).map(|_| c.next_symbol(&mut r).unwrap()).collect()
}

struct EstimatorReport {
    worst_kl: f64,
    worst_mean: f64,
    detail: String,
}

fn estimator_errors(a: f64, b: f64, seed: u64) -> EstimatorReport {
    let (s1, s2) = (bern(a), bern(b));
    let t1 = synth(&s1, 100_000, seed);
    let t2 = synth(&s2, 100_000, seed + 1);
    let queries = QuerySet::all(2, 2).unwrap();
    let model = EmpiricalHitModel::fit(&t1, &t2, queries.clone(), 100_000, 1.0, seed + 2).unwrap();
    let mut worst_kl = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut parts = Vec::new();
    for q in queries.iter() {
        let (p1, p2) = aligned_pair(&s1, &s2, q, &StartContext::Initial, 1e-12).unwrap();
        let kl = kl_divergence(&p1, &p2).unwrap();
        let est = estimate_kl(&model, q).unwrap();
        let kl_err = if kl > 0.0 { (est - kl).abs() / kl } else { f64::INFINITY };
        let m1 = (estimate_expected_hit_time(&model, q, Hypothesis::One).unwrap() - p1.mean()).abs() / p1.mean();
        let m2 = (estimate_expected_hit_time(&model, q, Hypothesis::Two).unwrap() - p2.mean()).abs() / p2.mean();
        worst_kl = worst_kl.max(kl_err);
        worst_mean = worst_mean.max(m1).max(m2);
        parts.push(format!("{q}: kl {est:.4}/{kl:.4}"));
    }
    EstimatorReport { worst_kl, worst_mean, detail: parts.join(", ") }
}

fn criterion_9() -> Outcome {
    let (a, b) = (0.3, 0.5);
    let rep = estimator_errors(a, b, SEED + 9);
    // The symmetric pair has zero exact divergence for "01"/"10" and a
    // long-tailed "11"; reported for reference, not gated.
    let sym = estimator_errors(0.3, 0.7, SEED + 19);

    let pair = HypothesisPair::new(bern(a), bern(b), 0.5).unwrap();
    let queries = QuerySet::all(2, 2).unwrap();
    let exact = ExactTables::build(&pair, queries.clone(), 1e-9).unwrap();
    let t1 = synth(&pair.p1, 100_000, SEED + 9);
    let t2 = synth(&pair.p2, 100_000, SEED + 10);
    let empirical = EmpiricalHitModel::fit(&t1, &t2, queries, 100_000, 1.0, SEED + 11).unwrap();
    let mut config = TestConfig::new(pair, Policy::AdaptiveGreedy);
    config.max_symbols = 10_000;
    config.max_queries = 1_000;
    let agree = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let x = run_test(&config, &exact, &mut run_rng(SEED + 12, i)).unwrap();
            let y = run_test(&config, &empirical, &mut run_rng(SEED + 12, i)).unwrap();
            (x.decision == y.decision) as usize
        })
        .sum::<usize>();
    check(
        rep.worst_kl <= 0.15 && rep.worst_mean <= 0.15 && agree >= 180,
        format!(
            "iid {a} vs {b}: max rel err kl {:.3}, mean {:.3} [{}]; decisions agree {agree}/200; \
             reference 0.3 vs 0.7: max rel err kl {:.3}, mean {:.3} [{}]",
            rep.worst_kl, rep.worst_mean, rep.detail, sym.worst_kl, sym.worst_mean, sym.detail
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let pair = HypothesisPair::new(bern(0.3), bern(0.7), 0.5).unwrap();
    let m = 3;
    let tab = ExactTables::build(&pair, QuerySet::all(2, m).unwrap(), 1e-9).unwrap();
    let mu_star = max_ratio_cycle(&QueryGraph::from_model(&tab, 0.5)).map_err(|e| e.to_string())?.mu;
    let mut exps = Vec::new();
    let mut parts = Vec::new();
    for (i, eps) in [0.1, 0.01, 0.001].into_iter().enumerate() {
        let mut config = TestConfig::new(pair.clone(), Policy::StaticOptimal);
        config.eps_t = eps;
        config.max_symbols = 1_000_000;
        config.max_queries = 100_000;
        let metrics = run_batch(&[BatchCell { config, model: &tab }], 2000, SEED + 100 + i as u64)
            .map_err(|e| e.to_string())?
            .remove(0);
        let beta = metrics.beta_importance();
        let e = -beta.ln() / metrics.mean_symbols();
        parts.push(format!(
            "eps {eps}: beta {beta:.2e} (counted {:.2e}), E[T] {:.1}, exponent {e:.4}",
            metrics.beta(),
            metrics.mean_symbols()
        ));
        exps.push(e);
    }
    let monotone = exps[0] < exps[1] && exps[1] < exps[2];
    let approaching = (mu_star - exps[2]).abs() < (mu_star - exps[0]).abs();
    check(monotone && approaching, format!("mu* = {mu_star:.4}; {}", parts.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("hit-time pmf exactness", criterion_1, Duration::from_secs(10)),
        ("markov pmf vs monte carlo", criterion_2, Duration::from_secs(60)),
        ("reversal and complement symmetry", criterion_3, Duration::from_secs(60)),
        ("max-ratio cycle vs enumeration", criterion_4, Duration::from_secs(30)),
        ("optimal query reproduction", criterion_5, Duration::from_secs(5)),
        ("belief algebra", criterion_6, Duration::from_secs(60)),
        ("iid heatmap", criterion_7, Duration::from_secs(300)),
        ("markov heatmap", criterion_8, Duration::from_secs(300)),
        ("trace estimator consistency", criterion_9, Duration::from_secs(120)),
        ("exponent trend", criterion_10, Duration::from_secs(180)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string()) {
            continue;
        }
        let t0 = Instant::now();
        let result = f();
        let elapsed = t0.elapsed();
        let (ok, detail) = match result {
            Ok(d) => (elapsed <= *limit, d),
            Err(d) => (false, d),
        };
        let time = format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs());
        println!("criterion {n:>2} {} {name}: {detail} ({time})", if ok { "PASS" } else { "FAIL" });
        failed += (!ok) as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

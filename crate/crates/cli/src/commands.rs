//! Subcommand bodies. Each takes resolved settings and writes to
//! `settings.out` (stdout when unset).

use std::io::Write;
use std::path::Path;

use qh_core::engine::{run_batch, run_rng, run_test, BatchCell, BatchMetrics, TestConfig};
use qh_core::estimation::{inter_arrival_correlation, EmpiricalHitModel};
use qh_core::hitpmf::{hit_time_pmf, StartContext};
use qh_core::inference::efficiency_ratio;
use qh_core::patterns::{QueryPattern, QuerySet};
use qh_core::sources::{make_bernoulli, make_markov_persistent, make_trace, HypothesisPair, SourceModel, Symbol, TraceStart};
use qh_core::strategy::{adaptive_choice, max_ratio_cycle, QueryGraph};
use qh_core::tables::{ExactTables, HitModel};
use serde_json::json;

use crate::config::{Grid, Settings, SourceKind};
use crate::ingest::{self, binarize_timings, binarize_trajectory, bins_to_bits, read_columns, TIMING_BINS};
use crate::output::{open_sink, write_json, CsvOut};
use crate::{CliError, IngestFormat};

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub enum Backend {
    Exact(ExactTables),
    Empirical(EmpiricalHitModel),
}

impl Backend {
    pub fn model(&self) -> &dyn HitModel {
        match self {
            Backend::Exact(t) => t,
            Backend::Empirical(e) => e,
        }
    }
}

/// The hypothesis pair Alice draws from and the model Bob reasons with.
pub struct Experiment {
    pub pair: HypothesisPair,
    pub backend: Backend,
    /// Fitting portions of the two traces, for trace sources.
    pub training: Option<[Vec<Symbol>; 2]>,
}

fn parametric_source(kind: SourceKind, p: f64) -> Result<SourceModel, CliError> {
    match kind {
        SourceKind::Iid => make_bernoulli(p).map_err(config),
        SourceKind::MarkovPersistent => make_markov_persistent(p).map_err(config),
        SourceKind::Trace => Err(config("this command needs an iid or markov-persistent source")),
    }
}

pub fn build_experiment(s: &Settings, p1: f64, p2: f64) -> Result<Experiment, CliError> {
    if s.source == SourceKind::Trace {
        return trace_experiment(s);
    }
    let pair = HypothesisPair::new(parametric_source(s.source, p1)?, parametric_source(s.source, p2)?, s.prior)
        .map_err(config)?;
    let queries = QuerySet::all(pair.alphabet(), s.m).map_err(config)?;
    let tables = ExactTables::build(&pair, queries, s.epsilon).map_err(runtime)?;
    Ok(Experiment { pair, backend: Backend::Exact(tables), training: None })
}

/// Fits the empirical model on the leading `train_fraction` of each trace;
/// tests replay the remainder from random offsets.
fn trace_experiment(s: &Settings) -> Result<Experiment, CliError> {
    let (a1, t1) = ingest::read_symbols(s.trace1.as_deref().expect("validated"))?;
    let (a2, t2) = ingest::read_symbols(s.trace2.as_deref().expect("validated"))?;
    let alphabet = a1.max(a2);
    let split = |t: &[_], name: &str| {
        let cut = ((t.len() as f64) * s.train_fraction).round() as usize;
        if cut == 0 || cut >= t.len() {
            return Err(config(format!("{name} has {} symbols, too few to split at {}", t.len(), s.train_fraction)));
        }
        Ok(cut)
    };
    let (c1, c2) = (split(&t1, "trace1")?, split(&t2, "trace2")?);
    let queries = QuerySet::all(alphabet, s.m).map_err(config)?;
    let model =
        EmpiricalHitModel::fit(&t1[..c1], &t2[..c2], queries, s.samples, s.smoothing, s.seed).map_err(runtime)?;
    let replay = |t: &[_]| make_trace(alphabet, t.to_vec(), TraceStart::RandomFrom(0)).map_err(config);
    let pair = HypothesisPair::new(replay(&t1[c1..])?, replay(&t2[c2..])?, s.prior).map_err(config)?;
    Ok(Experiment { pair, backend: Backend::Empirical(model), training: Some([t1[..c1].to_vec(), t2[..c2].to_vec()]) })
}

fn csv_out(s: &Settings, extra: &[(&str, String)], header: &[&str]) -> Result<CsvOut, CliError> {
    CsvOut::create(s.out.as_deref(), s.seed, &s.hash(), extra, header, s.full_precision)
}

pub fn pmf(
    s: &Settings,
    pattern: &str,
    iid_p: Option<f64>,
    markov_p: Option<f64>,
    start_context: Option<usize>,
) -> Result<(), CliError> {
    let q: QueryPattern = pattern.parse().map_err(config)?;
    let model = match (iid_p, markov_p) {
        (Some(p), _) => make_bernoulli(p).map_err(config)?,
        (None, Some(p)) => make_markov_persistent(p).map_err(config)?,
        (None, None) => parametric_source(s.source, s.p1)?,
    };
    let start = start_context.map_or(StartContext::Initial, StartContext::Context);
    let law = hit_time_pmf(&model, &q, &start, s.epsilon, 0).map_err(runtime)?;
    let mean = law.mean();
    let mut out = csv_out(
        s,
        &[("pattern", q.to_string()), ("mass_captured", format!("{}", law.mass_captured()))],
        &["t", "prob", "survival", "expectation"],
    )?;
    let mean_s = out.num(mean);
    for t in 1..=law.t_max() as u64 {
        let row = [t.to_string(), out.num(law.prob(t)), out.num(law.survival(t)), mean_s.clone()];
        out.row(row)?;
    }
    out.finish()
}

pub fn stats(s: &Settings) -> Result<(), CliError> {
    let exp = build_experiment(s, s.p1, s.p2)?;
    let model = exp.backend.model();
    let mut out = csv_out(
        s,
        &[("prior", format!("{}", s.prior))],
        &["pattern", "kl", "e1", "e2", "nu", "corr1", "corr2", "note"],
    )?;
    for (k, q) in model.queries().iter().enumerate() {
        // Lag-one correlation of hit times in the training traces; blank
        // for parametric sources.
        let corr = |h: usize| {
            exp.training
                .as_ref()
                .and_then(|t| inter_arrival_correlation(&t[h], q))
                .map_or(String::new(), |r| out.num(r))
        };
        let (c1, c2) = (corr(0), corr(1));
        let row = match model.stats(None, k) {
            Some(st) => [
                q.to_string(),
                out.num(st.kl),
                out.num(st.e1),
                out.num(st.e2),
                out.num(efficiency_ratio(st, s.prior)),
                c1,
                c2,
                String::new(),
            ],
            None => {
                let e = String::new;
                [q.to_string(), e(), e(), e(), e(), c1, c2, "excluded".into()]
            }
        };
        out.row(row)?;
    }
    out.finish()
}

pub fn optimal_query(s: &Settings, pi_grid: &str) -> Result<(), CliError> {
    let grid: Grid = pi_grid.parse().map_err(config)?;
    if grid.lo < 0.0 || grid.hi > 1.0 {
        return Err(config(format!("belief grid {pi_grid:?} leaves [0, 1]")));
    }
    let exp = build_experiment(s, s.p1, s.p2)?;
    let model = exp.backend.model();
    let mut out = csv_out(s, &[], &["pi", "pattern", "nu", "kl", "expected_time"])?;
    for pi in grid.points() {
        let k = adaptive_choice(model, None, pi).map_err(runtime)?;
        let st = model.stats(None, k).expect("chosen query has stats");
        let row = [
            out.num(pi),
            st.pattern.to_string(),
            out.num(efficiency_ratio(st, pi)),
            out.num(st.kl),
            out.num(st.expected_time(pi)),
        ];
        out.row(row)?;
    }
    out.finish()
}

pub fn cycle(s: &Settings) -> Result<(), CliError> {
    let exp = build_experiment(s, s.p1, s.p2)?;
    let graph = QueryGraph::from_model(exp.backend.model(), s.prior);
    let best = max_ratio_cycle(&graph).map_err(runtime)?;
    let names: Vec<String> = best.patterns.iter().map(|p| p.to_string()).collect();
    let mut out = csv_out(
        s,
        &[("mu_star", crate::output::fmt_num(best.mu, s.full_precision)), ("cycle", names.join(">"))],
        &["from", "to", "d", "t", "ratio", "on_cycle"],
    )?;
    let on_cycle = |i: usize, j: usize| {
        let n = best.cycle.len();
        (0..n).any(|k| best.cycle[k] == i && best.cycle[(k + 1) % n] == j)
    };
    for i in 0..graph.len() {
        for j in 0..graph.len() {
            let (Some(d), Some(t)) = (graph.d[i][j], graph.t[i][j]) else { continue };
            let row = [
                graph.patterns[i].to_string(),
                graph.patterns[j].to_string(),
                out.num(d),
                out.num(t),
                out.num(d / t),
                on_cycle(i, j).to_string(),
            ];
            out.row(row)?;
        }
    }
    out.finish()?;
    eprintln!("mu* = {} on cycle {}", best.mu, names.join(" > "));
    Ok(())
}

fn metrics_json(m: &BatchMetrics, prior: f64) -> serde_json::Value {
    json!({
        "runs": m.runs,
        "truth1": m.truth1,
        "truth2": m.truth2,
        "errors1": m.errors1,
        "errors2": m.errors2,
        "accuracy": m.accuracy(),
        "weighted_accuracy": m.weighted_accuracy(prior),
        "alpha": m.alpha(),
        "beta": m.beta(),
        "beta_importance": m.beta_importance(),
        "mean_symbols": m.mean_symbols(),
        "mean_queries": m.mean_queries(),
    })
}

fn test_config(s: &Settings, pair: HypothesisPair, policy: qh_core::engine::Policy) -> TestConfig {
    let mut c = TestConfig::new(pair, policy);
    c.eps_t = s.eps_t;
    c.max_queries = s.budget_queries;
    c.max_symbols = s.budget_symbols;
    c
}

pub fn simulate(s: &Settings, trajectory: Option<&Path>) -> Result<(), CliError> {
    let policy = s.single_policy()?;
    let exp = build_experiment(s, s.p1, s.p2)?;
    let model = exp.backend.model();
    let cfg = test_config(s, exp.pair.clone(), policy.clone());
    let runs = s.runs.unwrap_or(1);
    // Same stream as run 0 of the batch below.
    let first = run_test(&cfg, model, &mut run_rng(s.seed, 0)).map_err(runtime)?;
    let metrics = run_batch(&[BatchCell { config: cfg, model }], runs, s.seed).map_err(runtime)?.remove(0);

    if let Some(path) = trajectory {
        let mut t = CsvOut::create(
            Some(path),
            s.seed,
            &s.hash(),
            &[],
            &["step", "query", "delta_t", "censored", "belief"],
            s.full_precision,
        )?;
        t.row(["0".to_string(), String::new(), String::new(), String::new(), t.num(first.belief_trajectory[0])])?;
        for (i, (q, h)) in first.queries_sent.iter().zip(&first.hit_times).enumerate() {
            let row = [
                (i + 1).to_string(),
                q.to_string(),
                h.delta_t.to_string(),
                h.censored.to_string(),
                t.num(first.belief_trajectory[i + 1]),
            ];
            t.row(row)?;
        }
        t.finish()?;
    }

    let doc = json!({
        "seed": s.seed,
        "config_hash": s.hash(),
        "policy": policy.name(),
        "settings": s,
        "first_run": first,
        "metrics": metrics_json(&metrics, s.prior),
    });
    write_json(s.out.as_deref(), doc, s.full_precision)
}

pub fn heatmap(s: &Settings) -> Result<(), CliError> {
    if s.source == SourceKind::Trace {
        return Err(config("heatmap sweeps parametric sources; use simulate for traces"));
    }
    let policies = s.policies()?;
    let points = s.grid.points();
    for &p in &points {
        s.check_param(p, "grid point")?;
    }
    let mut cells = Vec::new();
    for &a in &points {
        for &b in &points {
            cells.push(((a, b), build_experiment(s, a, b)?));
        }
    }
    let runs = s.runs.unwrap_or(400);
    let mut out = csv_out(
        s,
        &[("runs", runs.to_string())],
        &["p1", "p2", "policy", "accuracy", "weighted_accuracy", "mean_symbols", "mean_queries", "alpha", "beta", "n"],
    )?;
    for policy in &policies {
        let batch: Vec<BatchCell> = cells
            .iter()
            .map(|(_, e)| BatchCell { config: test_config(s, e.pair.clone(), policy.clone()), model: e.backend.model() })
            .collect();
        let metrics = run_batch(&batch, runs, s.seed).map_err(runtime)?;
        for (((a, b), _), m) in cells.iter().zip(&metrics) {
            let row = [
                out.num(*a),
                out.num(*b),
                policy.name(),
                out.num(m.accuracy()),
                out.num(m.weighted_accuracy(s.prior)),
                out.num(m.mean_symbols()),
                out.num(m.mean_queries()),
                out.num(m.alpha()),
                out.num(m.beta()),
                m.runs.to_string(),
            ];
            out.row(row)?;
        }
    }
    out.finish()
}

pub fn ingest(
    s: &Settings,
    format: IngestFormat,
    input: &Path,
    invert: bool,
    binary: bool,
    column: &str,
) -> Result<(), CliError> {
    let file =
        std::fs::File::open(input).map_err(|e| config(format!("cannot open {}: {e}", input.display())))?;
    let (alphabet, symbols, table) = match format {
        IngestFormat::Xy => {
            if binary {
                return Err(config("--binary applies to timings only"));
            }
            let table = read_columns(file, &["x", "y"])?;
            if table.rows.len() < 2 {
                return Err(config(format!("{} needs at least two numeric rows", input.display())));
            }
            let points: Vec<(f64, f64)> = table.rows.iter().map(|r| (r[0], r[1])).collect();
            (2, binarize_trajectory(&points, invert), table)
        }
        IngestFormat::Timings => {
            if invert {
                return Err(config("--invert applies to xy trajectories only"));
            }
            let table = read_columns(file, &[column])?;
            if table.rows.is_empty() {
                return Err(config(format!("{} has no numeric rows", input.display())));
            }
            let values: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
            let (bins, constant) = binarize_timings(&values);
            if constant {
                eprintln!("warning: all timings are equal; every value maps to bin 0");
            }
            if binary {
                (2, bins_to_bits(&bins), table)
            } else {
                (TIMING_BINS, bins, table)
            }
        }
    };
    if table.skipped > 0 {
        eprintln!("warning: skipped {} non-numeric rows", table.skipped);
    }
    match s.out.as_deref() {
        Some(path) => ingest::write_symbols(path, alphabet, &symbols)?,
        None => {
            let mut sink = open_sink(None)?;
            sink.write_all(ingest::render_symbols(alphabet, &symbols).as_bytes()).map_err(runtime)?;
        }
    }
    eprintln!("{} symbols over alphabet {alphabet} from {} rows", symbols.len(), table.rows.len());
    Ok(())
}

//! Flat experiment configuration. The same struct is the TOML schema and
//! the set of command-line overrides; flags win over file values.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use qh_core::engine::Policy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA: &str = "\
config file: flat TOML, every key optional, unknown keys rejected
  source          = \"iid\" | \"markov-persistent\" | \"trace\"    (iid)
  p1, p2          = source parameter per hypothesis                (0.3, 0.7)
                    iid: P(Z = 1); markov-persistent: p in (0, 1]
  trace1, trace2  = symbol files, required when source = \"trace\"
  prior           = P(hypothesis 1) in [0, 1]                      (0.5)
  policy          = adaptive | static | cyclic | random | fixed:<pattern>,
                    comma-separated for heatmap                    (adaptive)
  m               = query length                                   (3)
  eps_t           = decision threshold in (0, 0.5)                 (0.01)
  budget_symbols  = symbols Alice may emit per test                (20)
  budget_queries  = queries Bob may send per test                  (10)
  runs            = tests per cell                                 (400; simulate: 1)
  seed            = master seed                                    (0)
  grid            = \"lo:hi:n\" parameter grid for heatmap           (0.1:0.9:9)
  epsilon         = hit-time truncation mass                       (1e-6)
  samples         = hit times drawn per query and trace            (10000)
  smoothing       = Laplace pseudo-count for trace histograms      (1.0)
  train_fraction  = leading share of each trace used for fitting   (0.8)
  out             = output path (stdout when absent)
  full_precision  = print every digit instead of 6 significant     (false)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Iid,
    MarkovPersistent,
    Trace,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[arg(long, global = true, value_enum)]
    pub source: Option<SourceKind>,
    #[arg(long, global = true)]
    pub p1: Option<f64>,
    #[arg(long, global = true)]
    pub p2: Option<f64>,
    #[arg(long, global = true)]
    pub trace1: Option<PathBuf>,
    #[arg(long, global = true)]
    pub trace2: Option<PathBuf>,
    #[arg(long, global = true)]
    pub prior: Option<f64>,
    #[arg(long, global = true)]
    pub policy: Option<String>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub eps_t: Option<f64>,
    #[arg(long, global = true)]
    pub budget_symbols: Option<u64>,
    #[arg(long, global = true)]
    pub budget_queries: Option<usize>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub smoothing: Option<f64>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, num_args = 0, default_missing_value = "true")]
    pub full_precision: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        ExperimentConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(self, top: ExperimentConfig) -> Self {
        let base = self;
        overlay!(
            base, top, source, p1, p2, trace1, trace2, prior, policy, m, eps_t, budget_symbols, budget_queries,
            runs, seed, grid, epsilon, samples, smoothing, train_fraction, out, full_precision
        )
    }
}

/// `lo:hi:n`, `n` evenly spaced points including both ends.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + step * i as f64).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("grid {s:?} is not lo:hi:n"));
        };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("grid bound {v:?} is not a number"));
        let (lo, hi) = (num(lo)?, num(hi)?);
        let n: usize = n.trim().parse().map_err(|_| format!("grid count {n:?} is not a positive integer"))?;
        if n == 0 || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(format!("grid {s:?} needs finite lo <= hi and n >= 1"));
        }
        Ok(Grid { lo, hi, n })
    }
}

/// A fully defaulted and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub source: SourceKind,
    pub p1: f64,
    pub p2: f64,
    pub trace1: Option<PathBuf>,
    pub trace2: Option<PathBuf>,
    pub prior: f64,
    pub policy: String,
    pub m: usize,
    pub eps_t: f64,
    pub budget_symbols: u64,
    pub budget_queries: usize,
    pub runs: Option<usize>,
    pub seed: u64,
    pub grid: Grid,
    pub epsilon: f64,
    pub samples: usize,
    pub smoothing: f64,
    pub train_fraction: f64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub full_precision: bool,
}

fn bad(msg: String) -> CliError {
    CliError::Config(msg)
}

impl Settings {
    pub fn resolve(c: ExperimentConfig) -> Result<Self, CliError> {
        let s = Settings {
            source: c.source.unwrap_or(SourceKind::Iid),
            p1: c.p1.unwrap_or(0.3),
            p2: c.p2.unwrap_or(0.7),
            trace1: c.trace1,
            trace2: c.trace2,
            prior: c.prior.unwrap_or(0.5),
            policy: c.policy.unwrap_or_else(|| "adaptive".into()),
            m: c.m.unwrap_or(3),
            eps_t: c.eps_t.unwrap_or(qh_core::engine::DEFAULT_EPS_T),
            budget_symbols: c.budget_symbols.unwrap_or(qh_core::engine::DEFAULT_MAX_SYMBOLS),
            budget_queries: c.budget_queries.unwrap_or(qh_core::engine::DEFAULT_MAX_QUERIES),
            runs: c.runs,
            seed: c.seed.unwrap_or(0),
            grid: c.grid.as_deref().unwrap_or("0.1:0.9:9").parse().map_err(bad)?,
            epsilon: c.epsilon.unwrap_or(qh_core::hitpmf::DEFAULT_EPSILON),
            samples: c.samples.unwrap_or(10_000),
            smoothing: c.smoothing.unwrap_or(qh_core::estimation::DEFAULT_SMOOTHING),
            train_fraction: c.train_fraction.unwrap_or(0.8),
            out: c.out,
            full_precision: c.full_precision.unwrap_or(false),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.source != SourceKind::Trace {
            self.check_param(self.p1, "p1")?;
            self.check_param(self.p2, "p2")?;
        } else if self.trace1.is_none() || self.trace2.is_none() {
            return Err(bad("source = \"trace\" needs trace1 and trace2".into()));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(bad(format!("prior {} is outside [0, 1]", self.prior)));
        }
        if !(1..=16).contains(&self.m) {
            return Err(bad(format!("m = {} must lie in 1..=16", self.m)));
        }
        if !(self.eps_t > 0.0 && self.eps_t < 0.5) {
            return Err(bad(format!("eps_t {} must lie in (0, 0.5)", self.eps_t)));
        }
        if self.budget_symbols == 0 || self.budget_queries == 0 {
            return Err(bad("budgets must be positive".into()));
        }
        if self.runs == Some(0) {
            return Err(bad("runs must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(bad(format!("epsilon {} must lie in (0, 0.5)", self.epsilon)));
        }
        if self.samples == 0 {
            return Err(bad("samples must be positive".into()));
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return Err(bad(format!("smoothing {} must be finite and >= 0", self.smoothing)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction)));
        }
        self.policies()?;
        Ok(())
    }

    pub fn check_param(&self, p: f64, name: &str) -> Result<(), CliError> {
        let ok = match self.source {
            SourceKind::Iid => (0.0..=1.0).contains(&p),
            SourceKind::MarkovPersistent => p > 0.0 && p <= 1.0,
            SourceKind::Trace => true,
        };
        if ok {
            Ok(())
        } else {
            Err(bad(format!("{name} = {p} is out of range for {:?} sources", self.source)))
        }
    }

    pub fn policies(&self) -> Result<Vec<Policy>, CliError> {
        self.policy
            .split(',')
            .map(|p| p.trim().parse::<Policy>().map_err(|e| bad(format!("policy {p:?}: {e}"))))
            .collect()
    }

    pub fn single_policy(&self) -> Result<Policy, CliError> {
        let mut all = self.policies()?;
        if all.len() != 1 {
            return Err(bad(format!("expected one policy, got {:?}", self.policy)));
        }
        Ok(all.remove(0))
    }

    /// First 16 hex digits of the SHA-256 of the resolved settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("settings serialize");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

//! Sequential hypothesis testing through pattern queries.
//!
//! Bob decides which of two sources Alice's symbol stream comes from. He
//! cannot read the stream; he can only send a pattern and learn how many
//! symbols passed before it occurred. This crate computes exact hit-time
//! laws, scores queries by divergence per unit waiting time, runs the
//! sequential test, and estimates the same quantities from traces when the
//! sources are unknown.

pub mod engine;
pub mod estimation;
pub mod hitpmf;
pub mod inference;
pub mod patterns;
pub mod sources;
pub mod strategy;
pub mod tables;

pub use engine::{
    exponent_diagnostic, run_batch, run_test, BatchCell, BatchMetrics, EngineError, Policy, StopReason, TestConfig,
    TestOutcome,
};
pub use hitpmf::{hit_time_pmf, HitTimePmf, PmfError, StartContext, DEFAULT_EPSILON};
pub use inference::{Belief, Decision, QueryStats};
pub use patterns::{HitRecord, QueryPattern, QuerySet};
pub use sources::{Hypothesis, HypothesisPair, SourceModel, Symbol};
pub use tables::{ExactTables, HitModel};

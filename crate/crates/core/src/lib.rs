//! Byzantine-robust decentralized averaging and decentralized SGD on sparse
//! communication graphs.
//!
//! The library simulates gossip-style averaging where a subset of nodes is
//! Byzantine: those nodes may declare arbitrary, per-receiver values each
//! round. Honest nodes defend with local clipping (`CG+`) or nearest-neighbor
//! screening (`NNA`), both parameterized by a per-node bound `b` on the
//! number of Byzantine neighbors.
//!
//! Modules:
//! - [`graph`]: topologies, Laplacians, spectra, and the graph class
//!   `Gamma(mu_min, b)` (honest-subgraph connectivity at least `mu_min`,
//!   at most `b` Byzantine neighbors per honest node).
//! - [`aggregate`]: the aggregation rules and the per-round error term that
//!   the contraction analysis controls.
//! - [`adversary`]: omniscient attack strategies and the scaling search.
//! - [`engine`]: synchronous round execution for mean estimation and D-SGD,
//!   with online checks of the theoretical bounds.
//! - [`metrics`]: variance/robustness measurements and bound evaluation.
//! - [`cli`]: config-file driven experiment runner.

pub mod adversary;
pub mod aggregate;
pub mod cli;
pub mod eigen;
pub mod engine;
pub mod graph;
pub mod metrics;
pub mod rng;
pub mod trace;
pub mod verify;

pub use aggregate::{Inbox, ParamMatrix, Rule, RuleConfig};
pub use adversary::{AttackKind, AttackSpec, OmniscientView, ScalingSearch};
pub use engine::{CommRounds, MonitorMode, RunConfig, RunOutcome, Task, TargetsSpec};
pub use graph::{SpectralInfo, Topology};
pub use metrics::BoundSet;
pub use trace::{RoundRecord, RunTrace, TraceHeader};

use thiserror::Error;

/// Top-level error type; each module keeps its own, this one exists so
/// callers that mix modules can use a single `Result`.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Eigen(#[from] eigen::EigenError),
    #[error(transparent)]
    Aggregate(#[from] aggregate::AggregateError),
    #[error(transparent)]
    Adversary(#[from] adversary::AdversaryError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, Error>;

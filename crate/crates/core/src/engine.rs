//! Run orchestration: decentralized averaging and D-SGD under attack.
//!
//! A run is fully described by a [`RunConfig`]. Every validation failure
//! surfaces when the run is prepared, never mid-loop, and every random draw
//! comes from a counter-based stream keyed by `(seed, node, round, purpose)`,
//! so instrumentation and attack search can never perturb a trajectory.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, AdversaryError, AttackKind, AttackSpec, OmniscientView};
use crate::aggregate::{self, AggregateError, ParamMatrix, Rule, RuleConfig};
use crate::graph::{GammaReport, GraphError, IndexMap, SpectralInfo, Topology};
use crate::metrics::{self, BoundSet, MetricsError, SLACK};
use crate::rng::{stream, Purpose};
use crate::trace::{RoundRecord, RunTrace, TaskConstants, TraceHeader};

pub use crate::adversary::assemble_inbox;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{what} must be {requirement}, got {got}")]
    BadParam { what: &'static str, requirement: &'static str, got: f64 },
    #[error("task shape: {0}")]
    TaskShape(String),
    #[error(
        "auto comm rounds need a contracting graph (gamma > 0, delta < 1); \
         got gamma {gamma:.3e}, delta {delta:.3e}"
    )]
    AutoCommInfeasible { gamma: f64, delta: f64 },
    #[error(
        "monitor violation at step {step} round {round}: {what} exceeds its \
         bound by {excess:.3e}"
    )]
    MonitorViolation { step: usize, round: usize, what: &'static str, excess: f64 },
}

/// Per-node optimization targets, indexed by the honest nodes in ascending
/// full-graph label order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetsSpec {
    /// iid Gaussian rows with coordinate std `std`.
    Gaussian { std: f64 },
    /// The same row for every node (zero heterogeneity).
    Shared { value: Vec<f64> },
    /// One explicit row per honest node.
    Explicit { rows: Vec<Vec<f64>> },
}

/// Starting point for optimization tasks: a common origin (zeros when
/// absent) plus optional iid Gaussian jitter per node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    #[serde(default)]
    pub jitter_std: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec { origin: None, jitter_std: 0.0 }
    }
}

/// What the honest nodes are trying to compute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Pure averaging: `x_i^0 = y_i`, no gradient steps.
    MeanEstimation { dim: usize, targets: TargetsSpec },
    /// `f_i(x) = 1/2 |x - y_i|^2`, so gradients are `x - y_i` and L = 1.
    QuadraticSum {
        dim: usize,
        targets: TargetsSpec,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        init: InitSpec,
    },
    /// Logistic regression on per-node synthetic samples labeled by a
    /// shared planted weight vector.
    LogisticSynthetic {
        dim: usize,
        samples_per_node: usize,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        init: InitSpec,
    },
}

impl Task {
    pub fn dim(&self) -> usize {
        match self {
            Task::MeanEstimation { dim, .. }
            | Task::QuadraticSum { dim, .. }
            | Task::LogisticSynthetic { dim, .. } => *dim,
        }
    }

    /// Averaging tasks have no gradient phase.
    pub fn is_averaging(&self) -> bool {
        matches!(self, Task::MeanEstimation { .. })
    }

    pub fn noise_sigma(&self) -> f64 {
        match self {
            Task::MeanEstimation { .. } => 0.0,
            Task::QuadraticSum { noise_sigma, .. }
            | Task::LogisticSynthetic { noise_sigma, .. } => *noise_sigma,
        }
    }
}

/// Synthetic logistic datasets, one block per honest node.
#[derive(Debug, Clone)]
pub struct LogisticData {
    /// `samples_per_node x dim` feature rows.
    pub features: Vec<Array2<f64>>,
    /// Labels in {-1, +1}.
    pub labels: Vec<Array1<f64>>,
    /// Planted weight vector the labels were drawn from.
    pub planted: Array1<f64>,
}

/// Materialized task state: initial parameters plus whatever the gradient
/// oracle needs, all in compact honest labels.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub x0: ParamMatrix,
    pub targets: Option<ParamMatrix>,
    pub target_mean: Option<Array1<f64>>,
    pub logistic: Option<LogisticData>,
    pub constants: TaskConstants,
}

/// Aggregation rounds after each optimization step. `Auto` solves for the
/// count that shrinks consensus error by a factor of 10 per step under the
/// rule's worst-case contraction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommRounds {
    Fixed(usize),
    Auto,
}

impl Default for CommRounds {
    fn default() -> Self {
        CommRounds::Fixed(1)
    }
}

/// What to do with the per-round guarantee checks. `Record` fills the excess
/// columns and counts violations; `Strict` additionally aborts the run on
/// the first violated inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMode {
    Off,
    Record,
    Strict,
}

/// Complete description of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: Topology,
    pub rule: Rule,
    /// Robustness parameter handed to the rule and the Gamma check.
    pub b: usize,
    /// Gossip step size; `None` takes `1/mu_max` of the honest subgraph.
    pub eta: Option<f64>,
    pub nna_local_eta: bool,
    pub attack: AttackSpec,
    pub task: Task,
    /// Optimizer step size (D-SGD only).
    pub rho: f64,
    /// Momentum coefficient in `[0, 1)`.
    pub beta: f64,
    /// Optimization steps, or averaging rounds for averaging tasks.
    pub steps: usize,
    pub comm: CommRounds,
    pub seed: u64,
    pub monitor: MonitorMode,
}

impl RunConfig {
    pub fn new(topology: Topology, rule: Rule, b: usize, task: Task) -> Self {
        RunConfig {
            topology,
            rule,
            b,
            eta: None,
            nna_local_eta: false,
            attack: AttackSpec::new(AttackKind::None),
            task,
            rho: 0.1,
            beta: 0.9,
            steps: 0,
            comm: CommRounds::default(),
            seed: 0,
            monitor: MonitorMode::Record,
        }
    }
}

fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "topology": cfg.topology.to_edge_list_str(),
        "rule": cfg.rule,
        "b": cfg.b,
        "eta": cfg.eta,
        "nna_local_eta": cfg.nna_local_eta,
        "attack": cfg.attack,
        "task": cfg.task,
        "rho": cfg.rho,
        "beta": cfg.beta,
        "steps": cfg.steps,
        "comm": cfg.comm,
        "seed": cfg.seed,
        "monitor": cfg.monitor,
    })
}

/// Everything derived from a config before the first round runs.
struct Prepared {
    honest: Topology,
    map: IndexMap,
    spectral_full: SpectralInfo,
    spectral_honest: SpectralInfo,
    gamma: GammaReport,
    rule_cfg: RuleConfig,
    bounds: Option<BoundSet>,
    comm: usize,
    data: TaskData,
    /// Full-graph labels of the honest nodes; RNG streams key on these so
    /// removing Byzantine nodes never changes an honest node's draws.
    old_ids: Vec<u64>,
    /// Variance-contraction and mean-drift checks run each round.
    armed_contraction: bool,
    /// Error-term norm check runs each round.
    armed_err: bool,
}

fn rule_budget(rule: Rule, b: usize) -> f64 {
    match rule {
        Rule::CgPlus => 2.0 * (b as f64 + 1.0),
        Rule::Nna => 8.0 * b as f64,
        Rule::Gossip | Rule::ClippedGossipOracle => 0.0,
    }
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, EngineError> {
    if !cfg.beta.is_finite() || !(0.0..1.0).contains(&cfg.beta) {
        return Err(EngineError::BadParam {
            what: "beta",
            requirement: "in [0, 1)",
            got: cfg.beta,
        });
    }
    if !cfg.task.is_averaging() && (!cfg.rho.is_finite() || cfg.rho <= 0.0) {
        return Err(EngineError::BadParam {
            what: "rho",
            requirement: "finite and > 0",
            got: cfg.rho,
        });
    }
    let sigma = cfg.task.noise_sigma();
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(EngineError::BadParam {
            what: "noise_sigma",
            requirement: "finite and >= 0",
            got: sigma,
        });
    }

    let (honest, map) = cfg.topology.honest_subgraph()?;
    let spectral_full = cfg.topology.spectral_info()?;
    let spectral_honest = honest.spectral_info()?;

    let eta_cap = if spectral_honest.mu_max > 0.0 {
        1.0 / spectral_honest.mu_max
    } else {
        f64::INFINITY
    };
    let eta = match cfg.eta {
        Some(e) => {
            if e > eta_cap + SLACK {
                return Err(EngineError::BadParam {
                    what: "eta",
                    requirement: "at most 1/mu_max of the honest subgraph",
                    got: e,
                });
            }
            e
        }
        None => {
            if eta_cap.is_finite() {
                eta_cap
            } else {
                1.0
            }
        }
    };
    let mut rule_cfg = RuleConfig::new(cfg.rule, cfg.b, eta)?;
    rule_cfg.nna_local_eta = cfg.nna_local_eta;

    // Gamma membership is checked against the rule's own connectivity
    // budget, so `member` is exactly "this run satisfies the contraction
    // guarantee's graph preconditions".
    let budget = rule_budget(cfg.rule, cfg.b);
    let gamma = cfg.topology.verify_gamma_membership(budget, cfg.b)?;
    let bounds = match cfg.rule {
        Rule::ClippedGossipOracle => None,
        r => Some(metrics::bounds_for(r, &spectral_honest, cfg.b, eta)?),
    };

    let comm = if cfg.task.is_averaging() {
        // Averaging runs are one aggregation round per step by definition.
        1
    } else {
        match cfg.comm {
            CommRounds::Fixed(c) => {
                if c == 0 {
                    return Err(EngineError::BadParam {
                        what: "comm_rounds_per_step",
                        requirement: "at least 1",
                        got: 0.0,
                    });
                }
                c
            }
            CommRounds::Auto => {
                let gamma_h = spectral_honest.gamma;
                let delta = bounds.as_ref().map_or(0.0, |b| b.delta);
                if gamma_h <= 0.0 || delta >= 1.0 - SLACK {
                    return Err(EngineError::AutoCommInfeasible { gamma: gamma_h, delta });
                }
                let c = (std::f64::consts::LN_10 / (gamma_h * (1.0 - delta))).ceil();
                (c as usize).max(1)
            }
        }
    };

    let old_ids: Vec<u64> = map.new_to_old.iter().map(|&o| o as u64).collect();
    let data = materialize_task(&cfg.task, &old_ids, cfg.seed)?;

    let feasible = bounds.as_ref().is_some_and(|b| b.feasible);
    let armed_contraction = cfg.monitor != MonitorMode::Off
        && feasible
        && gamma.member
        // Plain gossip has no defense, so its bounds only describe
        // Byzantine-free runs.
        && (cfg.rule != Rule::Gossip || cfg.topology.byzantine().is_empty());
    // Per-node NNA steps break the common-step-size form the error term is
    // defined through.
    let armed_err =
        armed_contraction && !(cfg.rule == Rule::Nna && cfg.nna_local_eta);

    Ok(Prepared {
        honest,
        map,
        spectral_full,
        spectral_honest,
        gamma,
        rule_cfg,
        bounds,
        comm,
        data,
        old_ids,
        armed_contraction,
        armed_err,
    })
}

fn draw_targets(
    spec: &TargetsSpec,
    dim: usize,
    old_ids: &[u64],
    seed: u64,
) -> Result<ParamMatrix, EngineError> {
    let h = old_ids.len();
    let rows: Vec<Vec<f64>> = match spec {
        TargetsSpec::Gaussian { std } => {
            if !std.is_finite() || *std < 0.0 {
                return Err(EngineError::BadParam {
                    what: "targets std",
                    requirement: "finite and >= 0",
                    got: *std,
                });
            }
            old_ids
                .iter()
                .map(|&o| {
                    let mut rng = stream(seed, o, 0, Purpose::Targets);
                    (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect()
        }
        TargetsSpec::Shared { value } => {
            if value.len() != dim {
                return Err(EngineError::TaskShape(format!(
                    "shared target has {} coordinates, task dim is {}",
                    value.len(),
                    dim
                )));
            }
            vec![value.clone(); h]
        }
        TargetsSpec::Explicit { rows } => {
            if rows.len() != h {
                return Err(EngineError::TaskShape(format!(
                    "{} explicit target rows for {} honest nodes",
                    rows.len(),
                    h
                )));
            }
            for (i, r) in rows.iter().enumerate() {
                if r.len() != dim {
                    return Err(EngineError::TaskShape(format!(
                        "target row {} has {} coordinates, task dim is {}",
                        i,
                        r.len(),
                        dim
                    )));
                }
            }
            rows.clone()
        }
    };
    Ok(ParamMatrix::from_rows(&rows)?)
}

fn draw_init(
    init: &InitSpec,
    dim: usize,
    old_ids: &[u64],
    seed: u64,
) -> Result<ParamMatrix, EngineError> {
    let origin = match &init.origin {
        Some(o) => {
            if o.len() != dim {
                return Err(EngineError::TaskShape(format!(
                    "init origin has {} coordinates, task dim is {}",
                    o.len(),
                    dim
                )));
            }
            Array1::from_vec(o.clone())
        }
        None => Array1::zeros(dim),
    };
    if !init.jitter_std.is_finite() || init.jitter_std < 0.0 {
        return Err(EngineError::BadParam {
            what: "init jitter_std",
            requirement: "finite and >= 0",
            got: init.jitter_std,
        });
    }
    let mut m = Array2::zeros((old_ids.len(), dim));
    for (i, &o) in old_ids.iter().enumerate() {
        let mut row = origin.clone();
        if init.jitter_std > 0.0 {
            let mut rng = stream(seed, o, 0, Purpose::InitJitter);
            for v in row.iter_mut() {
                *v += init.jitter_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        m.row_mut(i).assign(&row);
    }
    Ok(ParamMatrix::new(m)?)
}

/// Builds initial parameters, targets or datasets, and the reported task
/// constants. Smoothness and heterogeneity are exact for the quadratic
/// tasks (L = 1, zeta^2 = population variance of the targets, both
/// independent of the evaluation point) and numeric estimates for logistic
/// regression (Gram eigenvalue bound for L, gradient spread at the init
/// origin for zeta).
pub fn materialize_task(
    task: &Task,
    old_ids: &[u64],
    seed: u64,
) -> Result<TaskData, EngineError> {
    let dim = task.dim();
    if dim == 0 {
        return Err(EngineError::TaskShape("task dim must be at least 1".into()));
    }
    match task {
        Task::MeanEstimation { targets, .. } => {
            let y = draw_targets(targets, dim, old_ids, seed)?;
            let zeta = metrics::var_h(&y).sqrt();
            let mean = y.mean_row();
            Ok(TaskData {
                x0: y.clone(),
                targets: Some(y),
                target_mean: Some(mean),
                logistic: None,
                constants: TaskConstants { l_smooth: 1.0, sigma: 0.0, zeta_het: zeta },
            })
        }
        Task::QuadraticSum { targets, noise_sigma, init, .. } => {
            let y = draw_targets(targets, dim, old_ids, seed)?;
            let x0 = draw_init(init, dim, old_ids, seed)?;
            let zeta = metrics::var_h(&y).sqrt();
            let mean = y.mean_row();
            Ok(TaskData {
                x0,
                targets: Some(y),
                target_mean: Some(mean),
                logistic: None,
                constants: TaskConstants {
                    l_smooth: 1.0,
                    sigma: *noise_sigma,
                    zeta_het: zeta,
                },
            })
        }
        Task::LogisticSynthetic { samples_per_node, noise_sigma, init, .. } => {
            let k = *samples_per_node;
            if k == 0 {
                return Err(EngineError::TaskShape(
                    "samples_per_node must be at least 1".into(),
                ));
            }
            let mut planted_rng = stream(seed, u64::MAX, 0, Purpose::Samples);
            let planted: Array1<f64> =
                (0..dim).map(|_| planted_rng.sample::<f64, _>(StandardNormal)).collect();
            let mut features = Vec::with_capacity(old_ids.len());
            let mut labels = Vec::with_capacity(old_ids.len());
            for &o in old_ids {
                let mut rng = stream(seed, o, 0, Purpose::Samples);
                let mut z = Array2::zeros((k, dim));
                for v in z.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
                let mut l = Array1::zeros(k);
                for s in 0..k {
                    let p = sigmoid(z.row(s).dot(&planted));
                    l[s] = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
                }
                features.push(z);
                labels.push(l);
            }
            let x0 = draw_init(init, dim, old_ids, seed)?;
            let data = LogisticData { features, labels, planted };
            let l_smooth = logistic_smoothness(&data)?;
            let origin = match &init.origin {
                Some(o) => Array1::from_vec(o.clone()),
                None => Array1::zeros(dim),
            };
            let zeta = logistic_heterogeneity(&data, &origin);
            Ok(TaskData {
                x0,
                targets: None,
                target_mean: None,
                logistic: Some(data),
                constants: TaskConstants {
                    l_smooth,
                    sigma: *noise_sigma,
                    zeta_het: zeta,
                },
            })
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Largest per-node logistic smoothness constant: the logistic Hessian is
/// bounded by `Z^T Z / (4K)`.
fn logistic_smoothness(data: &LogisticData) -> Result<f64, EngineError> {
    let mut worst: f64 = 0.0;
    for z in &data.features {
        let k = z.nrows() as f64;
        let gram = z.t().dot(z) / (4.0 * k);
        let eig = crate::eigen::sym_eigen(&gram).map_err(GraphError::from)?;
        worst = worst.max(*eig.values.last().expect("dim >= 1"));
    }
    Ok(worst)
}

/// Root mean squared spread of the per-node gradients around their average,
/// evaluated at `point`.
fn logistic_heterogeneity(data: &LogisticData, point: &Array1<f64>) -> f64 {
    let h = data.features.len();
    let grads: Vec<Array1<f64>> =
        (0..h).map(|i| logistic_gradient(data, i, point)).collect();
    let mut mean = Array1::<f64>::zeros(point.len());
    for g in &grads {
        mean += g;
    }
    mean /= h as f64;
    let spread: f64 = grads
        .iter()
        .map(|g| (g - &mean).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / h as f64;
    spread.sqrt()
}

fn logistic_gradient(data: &LogisticData, node: usize, x: &Array1<f64>) -> Array1<f64> {
    let z = &data.features[node];
    let l = &data.labels[node];
    let k = z.nrows();
    let mut g = Array1::zeros(x.len());
    for s in 0..k {
        let zs = z.row(s);
        let margin = l[s] * zs.dot(x);
        // d/dx log(1 + exp(-margin)) = -l sigmoid(-margin) z
        let coeff = -l[s] * sigmoid(-margin) / k as f64;
        g.scaled_add(coeff, &zs);
    }
    g
}

/// Exact per-node gradient at `x`, compact honest label `node`.
pub fn exact_gradient(
    data: &TaskData,
    task: &Task,
    node: usize,
    x: &Array1<f64>,
) -> Array1<f64> {
    match task {
        Task::MeanEstimation { .. } | Task::QuadraticSum { .. } => {
            let y = data.targets.as_ref().expect("quadratic task has targets");
            x - &y.row(node)
        }
        Task::LogisticSynthetic { .. } => {
            let ld = data.logistic.as_ref().expect("logistic task has data");
            logistic_gradient(ld, node, x)
        }
    }
}

/// Stochastic first-order oracle: exact gradient plus isotropic Gaussian
/// noise with coordinate std `noise_sigma`.
pub fn gradient_oracle<R: Rng>(
    data: &TaskData,
    task: &Task,
    node: usize,
    x: &Array1<f64>,
    rng: &mut R,
) -> Array1<f64> {
    let mut g = exact_gradient(data, task, node, x);
    let sigma = task.noise_sigma();
    if sigma > 0.0 {
        for v in g.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    g
}

/// Gradient of the average honest objective at `x`.
fn global_gradient(data: &TaskData, task: &Task, h: usize, x: &Array1<f64>) -> Array1<f64> {
    match task {
        Task::MeanEstimation { .. } | Task::QuadraticSum { .. } => {
            x - data.target_mean.as_ref().expect("quadratic task has targets")
        }
        Task::LogisticSynthetic { .. } => {
            let mut g = Array1::zeros(x.len());
            for j in 0..h {
                g += &exact_gradient(data, task, j, x);
            }
            g / h as f64
        }
    }
}

/// Mean over honest nodes of `|grad f_H(x_i)|^2`, the consensus-quality
/// measure optimization runs track.
fn mean_global_grad_norm(data: &TaskData, task: &Task, x: &ParamMatrix) -> f64 {
    let h = x.nrows();
    let mut acc = 0.0;
    for i in 0..h {
        let g = global_gradient(data, task, h, &x.row(i).to_owned());
        acc += g.iter().map(|v| v * v).sum::<f64>();
    }
    acc / h as f64
}

/// Result of one run: the trace plus the boundary states.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub initial_state: ParamMatrix,
    pub final_state: ParamMatrix,
    /// Average of the per-node targets, when the task has them.
    pub target_mean: Option<Array1<f64>>,
}

/// Runs a pure averaging task for `steps` rounds. The trace has `steps + 1`
/// rows including the initial state.
pub fn mean_estimation_run(cfg: &RunConfig) -> Result<RunOutcome, EngineError> {
    if !cfg.task.is_averaging() {
        return Err(EngineError::TaskShape(
            "mean_estimation_run needs a mean estimation task".into(),
        ));
    }
    run_inner(cfg)
}

/// Runs Byzantine-robust D-SGD: each step draws stochastic gradients,
/// applies momentum and the local update, then aggregates for the
/// configured number of communication rounds.
pub fn dsgd_run(cfg: &RunConfig) -> Result<RunOutcome, EngineError> {
    if cfg.task.is_averaging() {
        return Err(EngineError::TaskShape(
            "dsgd_run needs an optimization task".into(),
        ));
    }
    run_inner(cfg)
}

/// Dispatches on the task kind.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, EngineError> {
    run_inner(cfg)
}

fn run_inner(cfg: &RunConfig) -> Result<RunOutcome, EngineError> {
    let p = prepare(cfg)?;
    let averaging = cfg.task.is_averaging();
    let h = p.honest.n();
    let d = cfg.task.dim();

    let mut x = p.data.x0.clone();
    let mut momentum = Array2::<f64>::zeros((h, d));
    let mean0 = x.mean_row();
    let var0 = metrics::var_h(&x);

    let initial_grad = if averaging {
        0.0
    } else {
        mean_global_grad_norm(&p.data, &cfg.task, &x)
    };
    let mut rows = Vec::with_capacity(cfg.steps * p.comm + 1);
    rows.push(RoundRecord {
        step: 0,
        round: 0,
        var_before: var0,
        var_h: var0,
        bias_drift: 0.0,
        mse_init_mean: var0,
        grad_norm_sq: initial_grad,
        zeta: 0.0,
        dir_max_norm: 0.0,
        err_norm_sq: f64::NAN,
        err_bound: f64::NAN,
        pairwise_energy: p.honest.laplacian().energy(x.as_array()),
        alpha_lhs: f64::NAN,
        step_bias_sq: f64::NAN,
        alpha_excess: f64::NAN,
        lambda_excess: f64::NAN,
        err_excess: f64::NAN,
        monitored: false,
        violations: 0,
    });

    let mut round = 0usize;
    for step in 1..=cfg.steps {
        let grad_metric = if averaging {
            0.0
        } else {
            let mut xa = x.into_array();
            for i in 0..h {
                let mut rng =
                    stream(cfg.seed, p.old_ids[i], step as u64, Purpose::GradNoise);
                let xi = xa.row(i).to_owned();
                let g = gradient_oracle(&p.data, &cfg.task, i, &xi, &mut rng);
                {
                    let mut m = momentum.row_mut(i);
                    for (mv, gv) in m.iter_mut().zip(g.iter()) {
                        *mv = cfg.beta * *mv + (1.0 - cfg.beta) * gv;
                    }
                }
                let mut row = xa.row_mut(i);
                for (xv, mv) in row.iter_mut().zip(momentum.row(i).iter()) {
                    *xv -= cfg.rho * mv;
                }
            }
            x = ParamMatrix::new(xa)?;
            mean_global_grad_norm(&p.data, &cfg.task, &x)
        };
        for _ in 0..p.comm {
            round += 1;
            let rec = comm_round(cfg, &p, &mut x, step, round, grad_metric, &mean0)?;
            rows.push(rec);
        }
    }

    let header = TraceHeader {
        config: config_echo(cfg),
        honest_count: h,
        byz_count: cfg.topology.byzantine().len(),
        eta: p.rule_cfg.eta,
        comm_rounds_per_step: p.comm,
        pure_averaging: averaging,
        spectral_full: (&p.spectral_full).into(),
        spectral_honest: (&p.spectral_honest).into(),
        gamma_membership: p.gamma.clone(),
        bounds: p.bounds,
        constants: p.data.constants,
        initial_var: var0,
    };
    Ok(RunOutcome {
        trace: RunTrace { header, rows },
        initial_state: p.data.x0.clone(),
        final_state: x,
        target_mean: p.data.target_mean.clone(),
    })
}

/// One aggregation round: forge, assemble, apply the rule, measure, and
/// monitor. Mutates `x` in place and returns the round's record.
fn comm_round(
    cfg: &RunConfig,
    p: &Prepared,
    x: &mut ParamMatrix,
    step: usize,
    round: usize,
    grad_metric: f64,
    mean0: &Array1<f64>,
) -> Result<RoundRecord, EngineError> {
    let var_before = metrics::var_h(x);
    let mean_before = x.mean_row();
    let view = OmniscientView {
        topo: &cfg.topology,
        honest: &p.honest,
        map: &p.map,
        x,
        fiedler: p.spectral_honest.fiedler.as_ref(),
    };
    let forge = adversary::forge_messages(&view, &cfg.attack, &p.rule_cfg)?;
    let inbox = assemble_inbox(&p.honest, &cfg.topology, &p.map, x, &forge.messages)?;
    let y = aggregate::apply_rule(x, &inbox, &p.rule_cfg)?;

    let var_after = metrics::var_h(&y);
    let mean_after = y.mean_row();
    let bias_drift = (&mean_after - mean0).iter().map(|v| v * v).sum::<f64>();
    let mse_init_mean = metrics::mse_to(&y, mean0);
    let alpha_lhs = metrics::mse_to(&y, &mean_before);
    let step_bias_sq =
        (&mean_after - &mean_before).iter().map(|v| v * v).sum::<f64>();

    // Per-node NNA steps have no common eta, so the error-term identity is
    // undefined for them; everything else gets the full extraction.
    let extractable = !(cfg.rule == Rule::Nna && cfg.nna_local_eta);
    let (err_norm_sq, err_bound, pairwise_energy) = if extractable {
        let rep =
            aggregate::extract_error_term(x, &y, p.rule_cfg.eta, &p.honest, cfg.b)?;
        let bound = match cfg.rule {
            Rule::CgPlus => rep.bound_cgplus,
            Rule::Nna => rep.bound_nna,
            Rule::Gossip => 0.0,
            Rule::ClippedGossipOracle => f64::NAN,
        };
        (rep.norm_sq, bound, rep.pairwise_energy)
    } else {
        (f64::NAN, f64::NAN, p.honest.laplacian().energy(x.as_array()))
    };

    let mut violations = 0u32;
    let mut alpha_excess = f64::NAN;
    let mut lambda_excess = f64::NAN;
    let mut err_excess = f64::NAN;
    let mut first: Option<(&'static str, f64)> = None;
    if p.armed_contraction {
        let b = p.bounds.as_ref().expect("armed implies bounds");
        alpha_excess = alpha_lhs - b.alpha_bound * var_before;
        lambda_excess = step_bias_sq - b.lambda_bound * var_before;
        if alpha_excess > SLACK {
            violations += 1;
            first.get_or_insert(("post-round MSE contraction", alpha_excess));
        }
        if lambda_excess > SLACK {
            violations += 1;
            first.get_or_insert(("mean drift bound", lambda_excess));
        }
    }
    if p.armed_err {
        err_excess = err_norm_sq - err_bound;
        if err_excess > SLACK {
            violations += 1;
            first.get_or_insert(("error term energy bound", err_excess));
        }
    }
    if cfg.monitor == MonitorMode::Strict {
        if let Some((what, excess)) = first {
            return Err(EngineError::MonitorViolation { step, round, what, excess });
        }
    }

    *x = y;
    Ok(RoundRecord {
        step,
        round,
        var_before,
        var_h: var_after,
        bias_drift,
        mse_init_mean,
        grad_norm_sq: grad_metric,
        zeta: forge.zeta,
        dir_max_norm: forge.dir_max_norm,
        err_norm_sq,
        err_bound,
        pairwise_energy,
        alpha_lhs,
        step_bias_sq,
        alpha_excess,
        lambda_excess,
        err_excess,
        monitored: p.armed_contraction,
        violations,
    })
}

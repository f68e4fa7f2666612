//! Robust per-round aggregation rules and the error term they induce.
//!
//! Every rule is one synchronous round: node `i` holds `x_i`, receives one
//! declared vector per neighbor (honest neighbors declare their true state,
//! Byzantine ones declare anything), and moves to a new state. The rules are
//! label-blind except for the oracle baseline.
//!
//! The robust rules share one threshold: `tau_i` is the `(b+1)`-th largest
//! distance `|x_j - x_i|` over the inbox. Clipped gossip (`CG+`) pulls every
//! difference clipped to radius `tau_i`; nearest-neighbor screening (`NNA`)
//! instead drops the `b` furthest senders outright.
//!
//! On the honest rows a round decomposes as
//! `X' = (I - eta W_H) X + eta E`, and the analysis bounds the disturbance:
//! `|E|^2 <= 2(b+1) |X|^2_{W_H}` for `CG+`, `|E|^2 <= 8b |X|^2_{W_H}` for
//! `NNA`, where `|X|^2_W = tr(X^T W X)` is the pairwise disagreement energy.
//! [`extract_error_term`] recovers `E` from the states alone so the bounds
//! can be checked on every simulated round.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Topology;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("negative clip radius {0}")]
    NegativeClipRadius(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("parameter matrix must have at least one row")]
    EmptyParams,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inbox has {got} receivers, parameter matrix has {want} rows")]
    ReceiverCount { got: usize, want: usize },
    #[error("duplicate sender {sender} for receiver {receiver}")]
    DuplicateSender { receiver: usize, sender: usize },
    #[error("step size must be finite and positive, got {0}")]
    BadEta(f64),
    #[error("screening bound b={b} must be at least 1 for the oracle threshold")]
    OracleNeedsPositiveB { b: usize },
    #[error("oracle threshold needs |H| - b >= 1, got |H|={h}, b={b}")]
    OracleTooFewHonest { h: usize, b: usize },
    #[error("honest-subgraph topology still contains Byzantine labels")]
    NotHonestSubgraph,
}

/// Row-stacked parameters: row `i` is the state of honest node `i` (in
/// honest-subgraph order). All entries finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix(Array2<f64>);

impl ParamMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self, AggregateError> {
        if m.nrows() == 0 {
            return Err(AggregateError::EmptyParams);
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(AggregateError::NonFinite("parameter matrix"));
        }
        Ok(ParamMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AggregateError> {
        if rows.is_empty() {
            return Err(AggregateError::EmptyParams);
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(AggregateError::DimensionMismatch("ragged rows".into()));
        }
        let mut m = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m[[i, j]] = *v;
            }
        }
        ParamMatrix::new(m)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Row mean, the honest average the analysis tracks.
    pub fn mean_row(&self) -> Array1<f64> {
        let n = self.nrows() as f64;
        self.0.sum_axis(ndarray::Axis(0)) / n
    }
}

/// One round of received messages: for each receiver (honest row index) the
/// declared vectors of all its neighbors, sorted by sender id. The sort
/// fixes the floating-point reduction order, making rounds reproducible.
#[derive(Debug, Clone)]
pub struct Inbox {
    entries: Vec<Vec<(usize, Array1<f64>)>>,
}

impl Inbox {
    pub fn new(mut entries: Vec<Vec<(usize, Array1<f64>)>>) -> Result<Self, AggregateError> {
        for (receiver, msgs) in entries.iter_mut().enumerate() {
            msgs.sort_by_key(|(sender, _)| *sender);
            for w in msgs.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(AggregateError::DuplicateSender { receiver, sender: w[0].0 });
                }
            }
            if msgs.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
                return Err(AggregateError::NonFinite("inbox message"));
            }
        }
        Ok(Inbox { entries })
    }

    pub fn receivers(&self) -> usize {
        self.entries.len()
    }

    /// Messages for receiver `i`, sorted by sender id.
    pub fn entries(&self, i: usize) -> &[(usize, Array1<f64>)] {
        &self.entries[i]
    }
}

/// Aggregation rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Clipped gossip with the order-statistic threshold.
    CgPlus,
    /// Nearest-neighbor screening: drop the `b` furthest senders.
    Nna,
    /// Clipped gossip with the oracle threshold that reads honest labels.
    ClippedGossipOracle,
    /// Plain (non-robust) gossip.
    Gossip,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::CgPlus => "cgplus",
            Rule::Nna => "nna",
            Rule::ClippedGossipOracle => "oracle",
            Rule::Gossip => "gossip",
        }
    }
}

/// Rule parameters. `b` is the per-node bound on Byzantine neighbors the
/// rule defends against; `eta` the gossip step size.
#[derive(Debug, Clone, Serialize)]
pub struct RuleConfig {
    pub rule: Rule,
    pub b: usize,
    pub eta: f64,
    /// When set, `NNA` uses the per-node step `1 / (|n(i)| - b + 1)`, which
    /// turns the update into a plain average of self plus kept senders,
    /// instead of the shared gossip `eta`.
    pub nna_local_eta: bool,
}

impl RuleConfig {
    pub fn new(rule: Rule, b: usize, eta: f64) -> Result<Self, AggregateError> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(AggregateError::BadEta(eta));
        }
        Ok(RuleConfig { rule, b, eta, nna_local_eta: false })
    }
}

/// Radial clip: `v` unchanged if `|v| <= tau`, otherwise scaled onto the
/// sphere of radius `tau`. Rejects negative radii.
pub fn clip(v: ArrayView1<'_, f64>, tau: f64) -> Result<Array1<f64>, AggregateError> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(AggregateError::NegativeClipRadius(tau));
    }
    let norm = l2(&v);
    if !norm.is_finite() {
        return Err(AggregateError::NonFinite("clip input"));
    }
    if norm <= tau {
        Ok(v.to_owned())
    } else {
        // norm > tau >= 0, so the division is safe.
        Ok(&v * (tau / norm))
    }
}

/// The shared threshold: `(b+1)`-th largest of the distance multiset, or 0
/// when fewer than `b+1` distances exist (the degenerate case freezes the
/// node for this round). Selection runs in expected linear time.
pub fn cgplus_threshold(dists: &[f64], b: usize) -> Result<f64, AggregateError> {
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(AggregateError::NonFinite("distance multiset"));
    }
    if b + 1 > dists.len() {
        return Ok(0.0);
    }
    let mut buf = dists.to_vec();
    // (b+1)-th largest == (len-1-b)-th smallest, 0-indexed.
    let k = buf.len() - 1 - b;
    Ok(quickselect(&mut buf, k))
}

/// K-th smallest (0-indexed) by in-place partitioning, median-of-three
/// pivot. Input values must be finite (checked by the caller).
fn quickselect(buf: &mut [f64], k: usize) -> f64 {
    debug_assert!(k < buf.len());
    let (mut lo, mut hi) = (0usize, buf.len() - 1);
    loop {
        if lo == hi {
            return buf[lo];
        }
        let mid = lo + (hi - lo) / 2;
        // Median of three into buf[mid] as pivot seed.
        if buf[lo] > buf[mid] {
            buf.swap(lo, mid);
        }
        if buf[mid] > buf[hi] {
            buf.swap(mid, hi);
            if buf[lo] > buf[mid] {
                buf.swap(lo, mid);
            }
        }
        let pivot = buf[mid];
        // Hoare partition.
        let (mut i, mut j) = (lo, hi);
        loop {
            while buf[i] < pivot {
                i += 1;
            }
            while buf[j] > pivot {
                j -= 1;
            }
            if i >= j {
                break;
            }
            buf.swap(i, j);
            i += 1;
            j -= 1;
        }
        if k <= j {
            hi = j;
        } else {
            lo = j + 1;
        }
    }
}

fn l2(v: &ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_shapes(x: &ParamMatrix, inbox: &Inbox) -> Result<(), AggregateError> {
    if inbox.receivers() != x.nrows() {
        return Err(AggregateError::ReceiverCount { got: inbox.receivers(), want: x.nrows() });
    }
    for i in 0..x.nrows() {
        for (sender, v) in inbox.entries(i) {
            if v.len() != x.dim() {
                return Err(AggregateError::DimensionMismatch(format!(
                    "message from {sender} to {i} has dim {}, expected {}",
                    v.len(),
                    x.dim()
                )));
            }
        }
    }
    Ok(())
}

/// One clipped-gossip round: each difference is clipped to the node's own
/// order-statistic threshold, then a gossip step of size `eta` is taken.
pub fn cgplus_round(
    x: &ParamMatrix,
    inbox: &Inbox,
    cfg: &RuleConfig,
) -> Result<ParamMatrix, AggregateError> {
    check_shapes(x, inbox)?;
    let mut out = x.as_array().clone();
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let msgs = inbox.entries(i);
        let dists: Vec<f64> = msgs.iter().map(|(_, v)| l2(&(v - &xi).view())).collect();
        let tau = cgplus_threshold(&dists, cfg.b)?;
        let mut acc = Array1::<f64>::zeros(x.dim());
        for ((_, v), dist) in msgs.iter().zip(&dists) {
            let diff = v - &xi;
            if *dist <= tau {
                acc += &diff;
            } else {
                acc.scaled_add(tau / dist, &diff);
            }
        }
        let mut row = out.row_mut(i);
        row.scaled_add(cfg.eta, &acc);
    }
    ParamMatrix::new(out)
}

/// One nearest-neighbor screening round: the `b` furthest senders (ties
/// broken by descending distance, then ascending sender id) are dropped,
/// the rest enter a gossip step.
pub fn nna_round(
    x: &ParamMatrix,
    inbox: &Inbox,
    cfg: &RuleConfig,
) -> Result<ParamMatrix, AggregateError> {
    check_shapes(x, inbox)?;
    let mut out = x.as_array().clone();
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let msgs = inbox.entries(i);
        let dists: Vec<f64> = msgs.iter().map(|(_, v)| l2(&(v - &xi).view())).collect();
        let drop_count = cfg.b.min(msgs.len());
        let mut order: Vec<usize> = (0..msgs.len()).collect();
        order.sort_by(|&a, &c| {
            dists[c]
                .partial_cmp(&dists[a])
                .expect("finite distances")
                .then(msgs[a].0.cmp(&msgs[c].0))
        });
        let dropped: BTreeSet<usize> = order[..drop_count].iter().copied().collect();
        let eta = if cfg.nna_local_eta {
            if msgs.len() > drop_count {
                1.0 / ((msgs.len() - cfg.b + 1) as f64)
            } else {
                0.0
            }
        } else {
            cfg.eta
        };
        let mut acc = Array1::<f64>::zeros(x.dim());
        for (idx, (_, v)) in msgs.iter().enumerate() {
            if !dropped.contains(&idx) {
                acc += &(v - &xi);
            }
        }
        let mut row = out.row_mut(i);
        row.scaled_add(eta, &acc);
    }
    ParamMatrix::new(out)
}

/// One plain gossip round, no robustness: `x_i + eta * sum_j (x_j - x_i)`.
pub fn plain_gossip_round(
    x: &ParamMatrix,
    inbox: &Inbox,
    eta: f64,
) -> Result<ParamMatrix, AggregateError> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(AggregateError::BadEta(eta));
    }
    check_shapes(x, inbox)?;
    let mut out = x.as_array().clone();
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let mut acc = Array1::<f64>::zeros(x.dim());
        for (_, v) in inbox.entries(i) {
            acc += &(v - &xi);
        }
        let mut row = out.row_mut(i);
        row.scaled_add(eta, &acc);
    }
    ParamMatrix::new(out)
}

/// Clipped gossip with the oracle threshold
/// `tau_i = sqrt( sum_{honest j in n(i)} |x_i - x_j|^2 / ((|H| - b) b) )`,
/// which reads honest labels and so is a baseline, not a deployable rule.
/// Requires `b >= 1` and `|H| > b`.
pub fn clippedgossip_oracle_round(
    x: &ParamMatrix,
    inbox: &Inbox,
    cfg: &RuleConfig,
    honest_ids: &BTreeSet<usize>,
    total_honest: usize,
) -> Result<ParamMatrix, AggregateError> {
    if cfg.b == 0 {
        return Err(AggregateError::OracleNeedsPositiveB { b: 0 });
    }
    if total_honest <= cfg.b {
        return Err(AggregateError::OracleTooFewHonest { h: total_honest, b: cfg.b });
    }
    check_shapes(x, inbox)?;
    let denom = ((total_honest - cfg.b) * cfg.b) as f64;
    let mut out = x.as_array().clone();
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let msgs = inbox.entries(i);
        let mut sq = 0.0;
        for (sender, v) in msgs {
            if honest_ids.contains(sender) {
                let d = l2(&(v - &xi).view());
                sq += d * d;
            }
        }
        let tau = (sq / denom).sqrt();
        let mut acc = Array1::<f64>::zeros(x.dim());
        for (_, v) in msgs {
            acc += &clip((v - &xi).view(), tau)?;
        }
        let mut row = out.row_mut(i);
        row.scaled_add(cfg.eta, &acc);
    }
    ParamMatrix::new(out)
}

/// Runs one round of `cfg.rule` in the compact honest labeling, where the
/// rows of `x` are the honest nodes and any sender id `>= x.nrows()` is a
/// Byzantine declaration. The oracle rule derives its honest set from that
/// convention; the other rules ignore sender identity.
pub fn apply_rule(
    x: &ParamMatrix,
    inbox: &Inbox,
    cfg: &RuleConfig,
) -> Result<ParamMatrix, AggregateError> {
    match cfg.rule {
        Rule::CgPlus => cgplus_round(x, inbox, cfg),
        Rule::Nna => nna_round(x, inbox, cfg),
        Rule::Gossip => plain_gossip_round(x, inbox, cfg.eta),
        Rule::ClippedGossipOracle => {
            let honest: BTreeSet<usize> = (0..x.nrows()).collect();
            clippedgossip_oracle_round(x, inbox, cfg, &honest, x.nrows())
        }
    }
}

/// Per-round disturbance report. `norm_sq` is `|E|^2` for the round's
/// realized error term; `pairwise_energy` is `|X|^2_{W_H}` of the pre-round
/// states; the bounds are what each rule's analysis promises for `|E|^2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorTermReport {
    pub norm_sq: f64,
    pub pairwise_energy: f64,
    pub bound_cgplus: f64,
    pub bound_nna: f64,
}

/// Recovers the error term of one robust round on the honest subgraph:
/// `E = (X_after - X_before) / eta + W_H X_before`. Also computes the
/// disagreement energy by two independent routes (trace form and explicit
/// pairwise sums) and insists they agree, guarding the Laplacian algebra.
pub fn extract_error_term(
    before: &ParamMatrix,
    after: &ParamMatrix,
    eta: f64,
    honest: &Topology,
    b: usize,
) -> Result<ErrorTermReport, AggregateError> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(AggregateError::BadEta(eta));
    }
    if !honest.byzantine().is_empty() {
        return Err(AggregateError::NotHonestSubgraph);
    }
    if before.nrows() != honest.n() || after.nrows() != honest.n() || before.dim() != after.dim() {
        return Err(AggregateError::DimensionMismatch(format!(
            "before {}x{}, after {}x{}, graph n={}",
            before.nrows(),
            before.dim(),
            after.nrows(),
            after.dim(),
            honest.n()
        )));
    }
    let w = honest.laplacian();
    let e = (after.as_array() - before.as_array()) / eta + w.matrix().dot(before.as_array());
    let norm_sq: f64 = e.iter().map(|v| v * v).sum();

    let energy_trace = w.energy(before.as_array());
    let mut pair_sum = 0.0;
    for i in 0..honest.n() {
        let xi = before.row(i);
        for &j in honest.neighbors(i) {
            let d = &before.row(j) - &xi;
            pair_sum += d.iter().map(|v| v * v).sum::<f64>();
        }
    }
    // Each unordered pair appears twice in the sum: 2 |X|^2_W = sum.
    let energy_pairs = 0.5 * pair_sum;
    let scale = energy_trace.abs().max(1.0);
    if (energy_trace - energy_pairs).abs() > 1e-10 * scale {
        return Err(AggregateError::DimensionMismatch(format!(
            "energy mismatch: trace route {energy_trace}, pairwise route {energy_pairs}"
        )));
    }

    Ok(ErrorTermReport {
        norm_sq,
        pairwise_energy: energy_trace,
        bound_cgplus: 2.0 * (b as f64 + 1.0) * energy_trace,
        bound_nna: 8.0 * (b as f64) * energy_trace,
    })
}

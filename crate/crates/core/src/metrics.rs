//! Robustness metrics and theoretical-bound evaluation: honest variance,
//! the one-step robustness ratio, per-rule bound sets, and the offline
//! re-check of a recorded trace against those bounds.

use ndarray::Array1;
use serde::Serialize;
use thiserror::Error;

use crate::aggregate::{ParamMatrix, Rule};
use crate::graph::SpectralInfo;
use crate::trace::RunTrace;

/// Absolute slack on every monitored inequality; values at desk scale are
/// O(1) to O(1e2), so this absorbs double-precision accumulation without
/// hiding real violations.
pub const SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("initial variance is zero, one-step ratio undefined")]
    ZeroInitialVariance,
    #[error("no published bounds for rule {0}")]
    NoBoundsForRule(&'static str),
    #[error("parameter matrices differ in shape")]
    ShapeMismatch,
}

/// Honest variance `(1/|H|) sum_i |x_i - mean|^2`.
pub fn var_h(x: &ParamMatrix) -> f64 {
    let mean = x.mean_row();
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let dev = &x.row(i) - &mean;
            dev.dot(&dev)
        })
        .sum::<f64>()
        / n as f64
}

/// Mean squared distance of the rows to a fixed reference point.
pub fn mse_to(x: &ParamMatrix, reference: &Array1<f64>) -> f64 {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let dev = &x.row(i) - reference;
            dev.dot(&dev)
        })
        .sum::<f64>()
        / n as f64
}

/// One-step robustness ratio: mean squared distance of the post-step rows
/// to the pre-step mean, divided by the pre-step variance. Below 1 means
/// the step contracted; not communicating scores exactly 1.
pub fn alpha_measured(
    before: &ParamMatrix,
    after: &ParamMatrix,
) -> Result<f64, MetricsError> {
    if before.nrows() != after.nrows() || before.dim() != after.dim() {
        return Err(MetricsError::ShapeMismatch);
    }
    let v = var_h(before);
    if v == 0.0 {
        return Err(MetricsError::ZeroInitialVariance);
    }
    Ok(mse_to(after, &before.mean_row()) / v)
}

/// Closed-form guarantees of one rule on one concrete honest spectrum.
/// `alpha_bound` multiplies the pre-round variance in the one-step
/// contraction, `lambda_bound` in the one-step mean-drift bound;
/// `asymptotic_bias_coeff` multiplies the initial variance. `feasible`
/// is false when the preconditions (`delta <= 1`, `eta <= 1/mu_max`)
/// fail and the inequalities are not claimed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundSet {
    pub rule: Rule,
    pub b: usize,
    pub eta: f64,
    pub mu2: f64,
    pub mu_max: f64,
    pub alpha_bound: f64,
    pub lambda_bound: f64,
    pub delta: f64,
    pub gamma: f64,
    pub asymptotic_bias_coeff: f64,
    pub feasible: bool,
}

/// Evaluates the rule's bound set on a measured spectrum. The robustness
/// budget is `2(b+1)` for clipping, `8b` for trimming, `0` for plain
/// gossip; the oracle baseline has no published constants.
pub fn bounds_for(
    rule: Rule,
    spectral: &SpectralInfo,
    b: usize,
    eta: f64,
) -> Result<BoundSet, MetricsError> {
    let budget = match rule {
        Rule::CgPlus => 2.0 * (b as f64 + 1.0),
        Rule::Nna => 8.0 * b as f64,
        Rule::Gossip => 0.0,
        Rule::ClippedGossipOracle => {
            return Err(MetricsError::NoBoundsForRule("oracle"))
        }
    };
    let mu2 = spectral.mu2;
    let mu_max = spectral.mu_max;
    let alpha_bound = 1.0 - eta * (mu2 - budget);
    let lambda_bound = budget * eta;
    let delta = if mu2 > 0.0 { budget / mu2 } else { f64::INFINITY };
    let gamma = spectral.gamma;
    // Within slack of delta = 1 the (1 - delta)^2 denominator is noise.
    let asymptotic_bias_coeff = if delta < 1.0 - SLACK && gamma > 0.0 {
        4.0 * delta / (gamma * (1.0 - delta) * (1.0 - delta))
    } else {
        f64::INFINITY
    };
    let feasible =
        mu2 > 0.0 && delta <= 1.0 + SLACK && eta <= 1.0 / mu_max + SLACK;
    Ok(BoundSet {
        rule,
        b,
        eta,
        mu2,
        mu_max,
        alpha_bound,
        lambda_bound,
        delta,
        gamma,
        asymptotic_bias_coeff,
        feasible,
    })
}

impl BoundSet {
    /// Variance allowed after `t` rounds of pure averaging.
    pub fn chained_var_bound(&self, t: usize, var0: f64) -> f64 {
        self.alpha_bound.max(0.0).powi(t as i32) * var0
    }

    /// Mean-drift allowed after `t` rounds of pure averaging: the partial
    /// geometric sum of per-round drifts.
    pub fn partial_bias_bound(&self, t: usize, var0: f64) -> f64 {
        let root = self.alpha_bound.max(0.0).sqrt();
        let mut sum = 0.0;
        let mut pow = 1.0;
        for _ in 0..t {
            sum += pow;
            pow *= root;
        }
        self.lambda_bound.sqrt() * sum * var0.sqrt()
    }

    /// Drift allowed at any horizon (the limit of the partial sums);
    /// infinite when the contraction factor reaches 1.
    pub fn asymptotic_bias_bound(&self, var0: f64) -> f64 {
        let root = self.alpha_bound.max(0.0).sqrt();
        if root >= 1.0 {
            return f64::INFINITY;
        }
        self.lambda_bound.sqrt() / (1.0 - root) * var0.sqrt()
    }
}

/// Offline verdict of [`check_run`]: per-inequality violation counts plus
/// diagnostics. `skipped` reports the out-of-scope case where the bound
/// set's preconditions fail and nothing is claimed.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub skipped: bool,
    pub skip_reason: Option<String>,
    pub rounds: usize,
    pub alpha_violations: usize,
    pub lambda_violations: usize,
    pub err_violations: usize,
    pub chained_var_violations: usize,
    pub bias_partial_violations: usize,
    pub asymptotic_violations: usize,
    /// Largest observed lhs-minus-rhs per inequality; negative when the
    /// inequality held with margin everywhere.
    pub max_alpha_excess: f64,
    pub max_lambda_excess: f64,
    pub max_err_excess: f64,
    /// Rows whose recorded online excess disagrees with this recomputation.
    pub recomputation_mismatches: usize,
}

impl ViolationReport {
    pub fn total(&self) -> usize {
        self.alpha_violations
            + self.lambda_violations
            + self.err_violations
            + self.chained_var_violations
            + self.bias_partial_violations
            + self.asymptotic_violations
    }

    fn skipped(reason: String) -> Self {
        ViolationReport {
            skipped: true,
            skip_reason: Some(reason),
            rounds: 0,
            alpha_violations: 0,
            lambda_violations: 0,
            err_violations: 0,
            chained_var_violations: 0,
            bias_partial_violations: 0,
            asymptotic_violations: 0,
            max_alpha_excess: f64::NEG_INFINITY,
            max_lambda_excess: f64::NEG_INFINITY,
            max_err_excess: f64::NEG_INFINITY,
            recomputation_mismatches: 0,
        }
    }
}

/// Re-derives every inequality from the trace's raw columns, independently
/// of the engine's online monitors, and cross-checks the recorded excesses
/// where those monitors ran. Chained (multi-round) inequalities only apply
/// to pure averaging runs; per-round ones apply everywhere.
pub fn check_run(trace: &RunTrace, bounds: &BoundSet) -> ViolationReport {
    if !bounds.feasible {
        return ViolationReport::skipped(format!(
            "preconditions fail: delta = {:.6}, eta = {:.6}, 1/mu_max = {:.6}",
            bounds.delta,
            bounds.eta,
            if bounds.mu_max > 0.0 { 1.0 / bounds.mu_max } else { f64::INFINITY }
        ));
    }
    let mut report = ViolationReport {
        skipped: false,
        skip_reason: None,
        rounds: trace.rows.len(),
        alpha_violations: 0,
        lambda_violations: 0,
        err_violations: 0,
        chained_var_violations: 0,
        bias_partial_violations: 0,
        asymptotic_violations: 0,
        max_alpha_excess: f64::NEG_INFINITY,
        max_lambda_excess: f64::NEG_INFINITY,
        max_err_excess: f64::NEG_INFINITY,
        recomputation_mismatches: 0,
    };
    let var0 = trace.header.initial_var;
    let chained = trace.header.pure_averaging;
    for row in &trace.rows {
        let alpha_excess = row.alpha_lhs - bounds.alpha_bound * row.var_before;
        let lambda_excess = row.step_bias_sq - bounds.lambda_bound * row.var_before;
        let err_excess = row.err_norm_sq - row.err_bound;
        report.max_alpha_excess = report.max_alpha_excess.max(alpha_excess);
        report.max_lambda_excess = report.max_lambda_excess.max(lambda_excess);
        report.max_err_excess = report.max_err_excess.max(err_excess);
        if alpha_excess > SLACK {
            report.alpha_violations += 1;
        }
        if lambda_excess > SLACK {
            report.lambda_violations += 1;
        }
        if err_excess > SLACK {
            report.err_violations += 1;
        }
        if row.monitored {
            for (stored, fresh) in [
                (row.alpha_excess, alpha_excess),
                (row.lambda_excess, lambda_excess),
                (row.err_excess, err_excess),
            ] {
                if (stored - fresh).abs() > 1e-9 * (1.0 + fresh.abs()) {
                    report.recomputation_mismatches += 1;
                }
            }
        }
        if chained {
            if row.var_h > bounds.chained_var_bound(row.round, var0) + SLACK {
                report.chained_var_violations += 1;
            }
            if row.bias_drift > bounds.partial_bias_bound(row.round, var0) + SLACK {
                report.bias_partial_violations += 1;
            }
            let asym = bounds.asymptotic_bias_bound(var0);
            if asym.is_finite() && row.bias_drift > asym + SLACK {
                report.asymptotic_violations += 1;
            }
        }
    }
    report
}

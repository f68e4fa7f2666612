//! Run traces: a JSON header describing the experiment and one CSV row per
//! communication round. Rendering goes through Rust's shortest-roundtrip
//! float formatting, so a trace is byte-identical across runs of the same
//! seeded configuration.

use serde::{Deserialize, Serialize};

use crate::graph::{GammaReport, SpectralInfo};
use crate::metrics::BoundSet;

/// One communication round. `step` is the optimization step the round
/// belongs to (equal to `round` for pure averaging). Quantities suffixed
/// `_excess` are monitor outputs, positive exactly when the corresponding
/// inequality failed; they are NaN on unmonitored rows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoundRecord {
    pub step: usize,
    pub round: usize,
    /// Honest variance entering the round.
    pub var_before: f64,
    /// Honest variance after the round.
    pub var_h: f64,
    /// Distance of the current honest mean to the initial honest mean.
    pub bias_drift: f64,
    /// Mean squared distance of honest rows to the initial honest mean.
    pub mse_init_mean: f64,
    /// Mean squared gradient norm of the step's gradient phase; 0 on
    /// rounds without one.
    pub grad_norm_sq: f64,
    /// Attack scaling chosen this round, in grid-candidate units.
    pub zeta: f64,
    /// Largest attack direction norm before normalization.
    pub dir_max_norm: f64,
    /// Squared norm of the round's realized aggregation error term.
    pub err_norm_sq: f64,
    /// What the rule's analysis allows for `err_norm_sq`.
    pub err_bound: f64,
    /// Disagreement energy of the pre-round honest states.
    pub pairwise_energy: f64,
    /// Mean squared distance of post-round rows to the pre-round mean.
    pub alpha_lhs: f64,
    /// Squared drift of the honest mean across this single round.
    pub step_bias_sq: f64,
    pub alpha_excess: f64,
    pub lambda_excess: f64,
    pub err_excess: f64,
    pub monitored: bool,
    /// Number of monitored inequalities that failed this round.
    pub violations: u32,
}

/// Bump when a column is added, removed, or reordered. Emitted as the
/// leading comment line of every CSV so readers can refuse stale layouts.
pub const CSV_FORMAT_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 19] = [
    "step",
    "round",
    "var_before",
    "var_h",
    "bias_drift",
    "mse_init_mean",
    "grad_norm_sq",
    "zeta",
    "dir_max_norm",
    "err_norm_sq",
    "err_bound",
    "pairwise_energy",
    "alpha_lhs",
    "step_bias_sq",
    "alpha_excess",
    "lambda_excess",
    "err_excess",
    "monitored",
    "violations",
];

impl RoundRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.round,
            self.var_before,
            self.var_h,
            self.bias_drift,
            self.mse_init_mean,
            self.grad_norm_sq,
            self.zeta,
            self.dir_max_norm,
            self.err_norm_sq,
            self.err_bound,
            self.pairwise_energy,
            self.alpha_lhs,
            self.step_bias_sq,
            self.alpha_excess,
            self.lambda_excess,
            self.err_excess,
            self.monitored as u8,
            self.violations,
        )
    }
}

/// Spectral quantities worth echoing in a header; the full eigensystem
/// stays with [`SpectralInfo`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub mu2: f64,
    pub mu_max: f64,
    pub gamma: f64,
    pub kernel_dim: usize,
}

impl From<&SpectralInfo> for SpectralSummary {
    fn from(info: &SpectralInfo) -> Self {
        SpectralSummary {
            mu2: info.mu2,
            mu_max: info.mu_max,
            gamma: info.gamma,
            kernel_dim: info.kernel_dim,
        }
    }
}

/// Analytic constants of the task the run optimizes; NaN sigma/zeta for
/// pure averaging where no gradients flow.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaskConstants {
    /// Smoothness constant of each local objective.
    pub l_smooth: f64,
    /// Gradient noise standard deviation.
    pub sigma: f64,
    /// Heterogeneity bound: max_i |grad f_i(x) - grad f(x)| at the optimum.
    pub zeta_het: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceHeader {
    /// Verbatim echo of the run configuration.
    pub config: serde_json::Value,
    pub honest_count: usize,
    pub byz_count: usize,
    /// Step size actually used after defaulting.
    pub eta: f64,
    pub comm_rounds_per_step: usize,
    /// True when no gradient phase ever runs, so cross-round contraction
    /// chaining is meaningful.
    pub pure_averaging: bool,
    pub spectral_full: SpectralSummary,
    pub spectral_honest: SpectralSummary,
    pub gamma_membership: GammaReport,
    /// Bound set of the configured rule, when one has published bounds.
    pub bounds: Option<BoundSet>,
    pub constants: TaskConstants,
    pub initial_var: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub rows: Vec<RoundRecord>,
}

impl RunTrace {
    /// CSV rendering of the per-round rows. Line one is the versioned
    /// format comment, line two the column names, then one row per round.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# trace-csv v{CSV_FORMAT_VERSION}\n");
        out.push_str(&CSV_COLUMNS.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }

    /// Pretty JSON rendering of the header.
    pub fn header_json(&self) -> String {
        serde_json::to_string_pretty(&self.header).expect("header serializes")
    }
}

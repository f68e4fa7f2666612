//! Python bindings. Graphs, spectra, single aggregation rounds, and full
//! simulation runs; matrices cross the boundary as plain nested lists.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Deserialize;

use byzgossip_core::adversary::{self, AttackKind, AttackSpec, OmniscientView};
use byzgossip_core::aggregate::{self, ParamMatrix, Rule, RuleConfig};
use byzgossip_core::cli::TopologySpec;
use byzgossip_core::engine::{self, CommRounds, MonitorMode, RunConfig, Task};
use byzgossip_core::graph::{SpectralInfo, Topology as CoreTopology};
use byzgossip_core::{metrics, verify};

fn verr<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parses a snake_case enum name the same way config files spell it.
fn from_name<T: for<'de> Deserialize<'de>>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_owned())).map_err(verr)
}

fn rows_of(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Topology", frozen)]
struct PyTopology {
    inner: CoreTopology,
}

fn spectral_dict<'py>(py: Python<'py>, sp: &SpectralInfo) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mu2", sp.mu2)?;
    d.set_item("mu_max", sp.mu_max)?;
    d.set_item("gamma", sp.gamma)?;
    d.set_item("connected", sp.mu2 > 0.0)?;
    d.set_item("eigenvalues", sp.eigenvalues.to_vec())?;
    d.set_item("fiedler", sp.fiedler.as_ref().map(|f| f.to_vec()))?;
    Ok(d)
}

#[pymethods]
impl PyTopology {
    /// Complete graph on n honest nodes.
    #[staticmethod]
    fn complete(n: usize) -> PyResult<Self> {
        Ok(Self { inner: CoreTopology::complete(n, []).map_err(verr)? })
    }

    /// Two m-cliques, each node bridged to k nodes of the other clique.
    #[staticmethod]
    fn two_clique_bridge(m: usize, k: usize) -> PyResult<Self> {
        Ok(Self { inner: CoreTopology::two_clique_bridge(m, k).map_err(verr)? })
    }

    /// The breakdown construction: three m-cliques, b links per pair per
    /// node, the third clique Byzantine.
    #[staticmethod]
    fn three_clique_ghb(m: usize, b: usize) -> PyResult<Self> {
        Ok(Self { inner: CoreTopology::three_clique_ghb(m, b).map_err(verr)? })
    }

    /// Edge-list text: "u v" lines, optional "nodes:"/"byzantine:" headers.
    #[staticmethod]
    fn from_edge_list(text: &str) -> PyResult<Self> {
        Ok(Self { inner: CoreTopology::from_edge_list_str(text).map_err(verr)? })
    }

    /// Generator grammar shared with the CLI, e.g. "complete 26 byz 3".
    #[staticmethod]
    fn from_generator(spec: &str) -> PyResult<Self> {
        Ok(Self { inner: byzgossip_core::cli::parse_generator(spec).map_err(verr)? })
    }

    /// New topology with k extra Byzantine nodes attached to everyone.
    fn attach_full_byzantine(&self, k: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.attach_full_byzantine(k).map_err(verr)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn honest_count(&self) -> usize {
        self.inner.honest_count()
    }

    #[getter]
    fn byzantine(&self) -> Vec<usize> {
        self.inner.byzantine().iter().copied().collect()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn edge_list(&self) -> String {
        self.inner.to_edge_list_str()
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.laplacian().matrix())
    }

    fn spectral_info<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        spectral_dict(py, &self.inner.spectral_info().map_err(verr)?)
    }

    /// Honest subgraph plus the old-label to new-label map.
    fn honest_subgraph(&self) -> PyResult<(Self, BTreeMap<usize, usize>)> {
        let (honest, map) = self.inner.honest_subgraph().map_err(verr)?;
        let translation = self
            .inner
            .honest_nodes()
            .into_iter()
            .filter_map(|old| map.new_of(old).map(|new| (old, new)))
            .collect();
        Ok((Self { inner: honest }, translation))
    }

    /// Class verdict: honest connectivity at least mu_min and at most b
    /// Byzantine neighbors per honest node.
    fn gamma_membership<'py>(
        &self,
        py: Python<'py>,
        mu_min: f64,
        b: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.verify_gamma_membership(mu_min, b).map_err(verr)?;
        let d = PyDict::new(py);
        d.set_item("member", r.member)?;
        d.set_item("honest_mu2", r.honest_mu2)?;
        d.set_item("max_byzantine_neighbors", r.max_byz_neighbors)?;
        d.set_item("required_mu_min", r.required_mu_min)?;
        d.set_item("allowed_b", r.allowed_b)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Topology(n={}, honest={}, byzantine={})",
            self.inner.n(),
            self.inner.honest_count(),
            self.inner.byzantine().len()
        )
    }
}

/// Coordinate-wise clip of v to radius tau.
#[pyfunction]
fn clip(v: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    let arr = ndarray::Array1::from(v);
    Ok(aggregate::clip(arr.view(), tau).map_err(verr)?.to_vec())
}

/// Clipping radius used by the robust rule: the (b+1)-th largest distance,
/// or 0 when fewer than b+1 distances exist.
#[pyfunction]
fn clip_threshold(distances: Vec<f64>, b: usize) -> PyResult<f64> {
    aggregate::cgplus_threshold(&distances, b).map_err(verr)
}

/// One communication round under an omniscient attack: forge declarations,
/// assemble inboxes, apply the rule. Returns the new honest state and a
/// report with the searched attack scale, realized damage, and the error
/// term against both rules' energy budgets.
#[pyfunction]
#[pyo3(signature = (topo, x, rule, b, eta = None, attack = "none"))]
fn aggregate_round<'py>(
    py: Python<'py>,
    topo: &PyTopology,
    x: Vec<Vec<f64>>,
    rule: &str,
    b: usize,
    eta: Option<f64>,
    attack: &str,
) -> PyResult<(Vec<Vec<f64>>, Bound<'py, PyDict>)> {
    let topo = &topo.inner;
    let (honest, map) = topo.honest_subgraph().map_err(verr)?;
    let sp = honest.spectral_info().map_err(verr)?;
    let x = ParamMatrix::from_rows(&x).map_err(verr)?;
    if x.nrows() != honest.n() {
        return Err(verr(format!(
            "state has {} rows but the graph has {} honest nodes",
            x.nrows(),
            honest.n()
        )));
    }
    let eta = eta.unwrap_or(if sp.mu_max > 0.0 { 1.0 / sp.mu_max } else { 1.0 });
    let rule: Rule = from_name(rule)?;
    let kind: AttackKind = from_name(attack)?;
    let rule_cfg = RuleConfig::new(rule, b, eta).map_err(verr)?;
    let spec = AttackSpec::new(kind);
    let view = OmniscientView {
        topo,
        honest: &honest,
        map: &map,
        x: &x,
        fiedler: sp.fiedler.as_ref(),
    };
    let forge = adversary::forge_messages(&view, &spec, &rule_cfg).map_err(verr)?;
    let inbox =
        adversary::assemble_inbox(&honest, topo, &map, &x, &forge.messages).map_err(verr)?;
    let y = aggregate::apply_rule(&x, &inbox, &rule_cfg).map_err(verr)?;
    let damage = metrics::mse_to(&y, &x.mean_row());
    let term = aggregate::extract_error_term(&x, &y, eta, &honest, b).map_err(verr)?;
    let d = PyDict::new(py);
    d.set_item("eta", eta)?;
    d.set_item("zeta", forge.zeta)?;
    d.set_item("dir_max_norm", forge.dir_max_norm)?;
    d.set_item("damage", damage)?;
    d.set_item("err_norm_sq", term.norm_sq)?;
    d.set_item("pairwise_energy", term.pairwise_energy)?;
    d.set_item("err_bound_clipping", term.bound_cgplus)?;
    d.set_item("err_bound_screening", term.bound_nna)?;
    Ok((rows_of(y.as_array()), d))
}

fn default_rho() -> f64 {
    0.1
}

fn default_beta() -> f64 {
    0.9
}

/// Single-run config: the experiment-file fields without the sweep axes.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SingleRun {
    topology: TopologySpec,
    rule: Rule,
    b: usize,
    #[serde(default)]
    eta: Option<f64>,
    #[serde(default)]
    nna_local_eta: bool,
    #[serde(default)]
    attack: Option<AttackSpec>,
    task: Task,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default = "default_beta")]
    beta: f64,
    steps: usize,
    #[serde(default)]
    comm: CommRounds,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    monitor: Option<MonitorMode>,
}

/// Runs one configuration from JSON (file-topology paths resolve against
/// the working directory). Returns the CSV trace and header verbatim plus
/// the initial and final honest states.
#[pyfunction]
fn run<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let single: SingleRun = serde_json::from_str(config_json).map_err(verr)?;
    let topo = single.topology.build(std::path::Path::new(".")).map_err(verr)?;
    let mut cfg = RunConfig::new(topo, single.rule, single.b, single.task);
    cfg.eta = single.eta;
    cfg.nna_local_eta = single.nna_local_eta;
    if let Some(attack) = single.attack {
        cfg.attack = attack;
    }
    cfg.rho = single.rho;
    cfg.beta = single.beta;
    cfg.steps = single.steps;
    cfg.comm = single.comm;
    cfg.seed = single.seed;
    if let Some(monitor) = single.monitor {
        cfg.monitor = monitor;
    }
    let out = engine::run(&cfg).map_err(verr)?;
    let violations: u64 = out.trace.rows.iter().map(|r| u64::from(r.violations)).sum();
    let d = PyDict::new(py);
    d.set_item("csv", out.trace.to_csv())?;
    d.set_item("header_json", out.trace.header_json())?;
    d.set_item("rounds", out.trace.rows.len())?;
    d.set_item("monitored", out.trace.rows.iter().any(|r| r.monitored))?;
    d.set_item("violations", violations)?;
    d.set_item("initial_state", rows_of(out.initial_state.as_array()))?;
    d.set_item("final_state", rows_of(out.final_state.as_array()))?;
    d.set_item("target_mean", out.target_mean.as_ref().map(|m| m.to_vec()))?;
    d.set_item(
        "final_var",
        out.trace.rows.last().map(|r| r.var_h).unwrap_or(f64::NAN),
    )?;
    Ok(d)
}

/// Runs an acceptance suite ("all" for every criterion); returns one dict
/// per criterion.
#[pyfunction]
fn verify_suite<'py>(py: Python<'py>, name: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let results = if name == "all" {
        verify::run_all()
    } else {
        verify::run_suite(name).map_err(verr)?
    };
    results
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("id", r.id)?;
            d.set_item("name", r.name)?;
            d.set_item("passed", r.passed)?;
            d.set_item("detail", r.detail)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn byzgossip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_function(wrap_pyfunction!(clip, m)?)?;
    m.add_function(wrap_pyfunction!(clip_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_round, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    Ok(())
}

//! Communication topologies with Byzantine labels, their Laplacians and
//! spectra, and the robustness-relevant graph class.
//!
//! A graph belongs to `Gamma(mu_min, b)` when the subgraph induced on honest
//! nodes has algebraic connectivity `mu2 >= mu_min` and no honest node has
//! more than `b` Byzantine neighbors. Both quantities are what the
//! aggregation guarantees are stated against, so they are computed here once
//! and threaded through the rest of the crate.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::eigen::{sym_eigen, EigenError};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {0} out of range for graph of {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("graph has no nodes")]
    Empty,
    #[error("graph has no honest nodes")]
    NoHonestNodes,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("edge list parse error at line {line}: {msg}")]
    EdgeListParse { line: usize, msg: String },
    #[error(
        "no Gamma(mu_min={mu_min}, b={b}) sample within {attempts} attempts; best honest mu2 seen {best_mu2}"
    )]
    GammaRejection { mu_min: f64, b: usize, attempts: usize, best_mu2: f64 },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Undirected simple graph with a Byzantine node subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    n: usize,
    /// Edges stored as ordered pairs `u < v`.
    edges: BTreeSet<(usize, usize)>,
    byzantine: BTreeSet<usize>,
    /// Sorted adjacency lists, rebuilt on construction.
    #[serde(skip)]
    adj: Vec<Vec<usize>>,
}

/// Index translation produced by [`Topology::honest_subgraph`].
#[derive(Debug, Clone)]
pub struct IndexMap {
    /// `new_to_old[new]` is the original id of subgraph node `new`.
    pub new_to_old: Vec<usize>,
    /// `old_to_new[old]` is `Some(new)` for honest nodes, `None` otherwise.
    pub old_to_new: Vec<Option<usize>>,
}

impl IndexMap {
    pub fn new_of(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(old).copied().flatten()
    }
}

/// Unweighted graph Laplacian `L = D - A`. Entries are exact small integers
/// stored as `f64`.
#[derive(Debug, Clone)]
pub struct Laplacian(Array2<f64>);

impl Laplacian {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.0
    }

    /// Quadratic energy `tr(X^T L X)` of row-stacked parameters.
    pub fn energy(&self, x: &Array2<f64>) -> f64 {
        let lx = self.0.dot(x);
        x.iter().zip(lx.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Spectral summary of a Laplacian.
///
/// `mu2` is the algebraic connectivity: 0 for a disconnected graph
/// (`kernel_dim > 1`), otherwise the second-smallest eigenvalue. The Fiedler
/// vector is present only for connected graphs with at least two nodes; its
/// sign is normalized (first component of absolute value above 1e-12 is
/// positive) and under eigenvalue multiplicity the lexicographically largest
/// normalized candidate is chosen, so it is a deterministic function of the
/// graph.
#[derive(Debug, Clone)]
pub struct SpectralInfo {
    pub mu2: f64,
    pub mu_max: f64,
    /// Spectral gap `mu2 / mu_max`; 0 when `mu_max` is 0.
    pub gamma: f64,
    pub fiedler: Option<Array1<f64>>,
    /// Multiplicity of the zero eigenvalue, i.e. number of connected
    /// components (1 for a connected graph).
    pub kernel_dim: usize,
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

impl SpectralInfo {
    pub fn connected(&self) -> bool {
        self.kernel_dim == 1
    }
}

/// Outcome of a `Gamma(mu_min, b)` membership check.
#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    pub member: bool,
    /// Measured algebraic connectivity of the honest subgraph.
    pub honest_mu2: f64,
    pub max_byz_neighbors: usize,
    pub required_mu_min: f64,
    pub allowed_b: usize,
}

/// Parameters for [`Topology::random_gamma`].
#[derive(Debug, Clone, Serialize)]
pub struct GammaGraphParams {
    pub n_honest: usize,
    pub n_byz: usize,
    /// Probability of each honest-honest edge, and of each of the (at most
    /// `b`) Byzantine attachments per honest node.
    pub edge_prob: f64,
    pub mu_min: f64,
    pub b: usize,
}

const GAMMA_ATTEMPTS: usize = 1000;
/// Slack on spectral comparisons against exact class constants.
const SPECTRAL_SLACK: f64 = 1e-9;

impl Topology {
    /// Builds a topology from an edge iterator. Rejects self loops and
    /// out-of-range endpoints; duplicate edges collapse.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        byzantine: impl IntoIterator<Item = usize>,
    ) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if u >= n {
                return Err(GraphError::NodeOutOfRange(u, n));
            }
            if v >= n {
                return Err(GraphError::NodeOutOfRange(v, n));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let mut byz = BTreeSet::new();
        for i in byzantine {
            if i >= n {
                return Err(GraphError::NodeOutOfRange(i, n));
            }
            byz.insert(i);
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &set {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Topology { n, edges: set, byzantine: byz, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn byzantine(&self) -> &BTreeSet<usize> {
        &self.byzantine
    }

    pub fn is_byzantine(&self, i: usize) -> bool {
        self.byzantine.contains(&i)
    }

    pub fn honest_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|i| !self.byzantine.contains(i)).collect()
    }

    pub fn honest_count(&self) -> usize {
        self.n - self.byzantine.len()
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn byz_neighbor_count(&self, i: usize) -> usize {
        self.adj[i].iter().filter(|&&j| self.byzantine.contains(&j)).count()
    }

    /// Largest Byzantine neighborhood over honest nodes.
    pub fn max_byz_neighbors(&self) -> usize {
        (0..self.n)
            .filter(|i| !self.byzantine.contains(i))
            .map(|i| self.byz_neighbor_count(i))
            .max()
            .unwrap_or(0)
    }

    /// Complete graph on `n` nodes with the given Byzantine subset.
    pub fn complete(n: usize, byzantine: impl IntoIterator<Item = usize>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let edges = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v)));
        Topology::new(n, edges, byzantine)
    }

    /// Two complete graphs of `m` nodes bridged by circular cross links:
    /// node `j` of the first clique is linked to nodes `j..j+k-1 (mod m)` of
    /// the second, so every node gains exactly `k` cross neighbors. All
    /// nodes honest. With `k = m` this is the complete graph on `2m` nodes.
    pub fn two_clique_bridge(m: usize, k: usize) -> Result<Self, GraphError> {
        if m == 0 {
            return Err(GraphError::Empty);
        }
        if k > m {
            return Err(GraphError::InvalidParam(format!(
                "cross-link count k={k} exceeds clique size m={m}"
            )));
        }
        let mut edges = Vec::new();
        for c in 0..2usize {
            let base = c * m;
            for u in 0..m {
                for v in (u + 1)..m {
                    edges.push((base + u, base + v));
                }
            }
        }
        for j in 0..m {
            for q in 0..k {
                edges.push((j, m + (j + q) % m));
            }
        }
        Topology::new(2 * m, edges, [])
    }

    /// The breakdown construction: three cliques of `m` nodes, where node
    /// `j` of clique `i` is linked to nodes `j..j+b-1 (mod m)` of clique
    /// `i+1 (mod 3)`. Every node ends with exactly `b` neighbors in each
    /// other clique. The third clique is Byzantine, so the honest subgraph
    /// is exactly [`Topology::two_clique_bridge`]`(m, b)`.
    pub fn three_clique_ghb(m: usize, b: usize) -> Result<Self, GraphError> {
        if m == 0 {
            return Err(GraphError::Empty);
        }
        if b > m {
            return Err(GraphError::InvalidParam(format!(
                "cross-link count b={b} exceeds clique size m={m}"
            )));
        }
        let mut edges = Vec::new();
        for c in 0..3usize {
            let base = c * m;
            for u in 0..m {
                for v in (u + 1)..m {
                    edges.push((base + u, base + v));
                }
            }
            let next = ((c + 1) % 3) * m;
            for j in 0..m {
                for q in 0..b {
                    edges.push((base + j, next + (j + q) % m));
                }
            }
        }
        Topology::new(3 * m, edges, (2 * m)..(3 * m))
    }

    /// Adds `k` Byzantine nodes, each adjacent to every existing honest
    /// node (and to each other), so every honest node gains exactly `k`
    /// Byzantine neighbors. Existing Byzantine nodes are left untouched.
    pub fn attach_full_byzantine(&self, k: usize) -> Result<Self, GraphError> {
        let n = self.n + k;
        let mut edges: Vec<(usize, usize)> = self.edges.iter().copied().collect();
        for extra in 0..k {
            let s = self.n + extra;
            for i in 0..self.n {
                if !self.byzantine.contains(&i) {
                    edges.push((i, s));
                }
            }
            for other in (extra + 1)..k {
                edges.push((s, self.n + other));
            }
        }
        let byz = self.byzantine.iter().copied().chain(self.n..n);
        Topology::new(n, edges, byz)
    }

    /// Rejection-samples a `Gamma(mu_min, b)` member: honest-honest edges
    /// are Erdos-Renyi with `edge_prob`, each honest node independently
    /// attaches to at most `b` distinct Byzantine nodes (each of the
    /// `min(b, n_byz)` slots filled with `edge_prob`), Byzantine nodes form
    /// a clique. Samples are drawn until the honest subgraph reaches
    /// `mu_min`, up to a budget of 1000 attempts.
    pub fn random_gamma(params: &GammaGraphParams, seed: u64) -> Result<Self, GraphError> {
        let GammaGraphParams { n_honest, n_byz, edge_prob, mu_min, b } = *params;
        if n_honest == 0 {
            return Err(GraphError::NoHonestNodes);
        }
        if !(0.0..=1.0).contains(&edge_prob) {
            return Err(GraphError::InvalidParam(format!(
                "edge_prob {edge_prob} outside [0, 1]"
            )));
        }
        if !mu_min.is_finite() || mu_min < 0.0 {
            return Err(GraphError::InvalidParam(format!("mu_min {mu_min} invalid")));
        }
        let mut best_mu2 = f64::NEG_INFINITY;
        for attempt in 0..GAMMA_ATTEMPTS {
            let mut rng = stream(seed, 0, attempt as u64, Purpose::GraphGen);
            let mut edges = Vec::new();
            for u in 0..n_honest {
                for v in (u + 1)..n_honest {
                    if rng.random::<f64>() < edge_prob {
                        edges.push((u, v));
                    }
                }
            }
            let slots = b.min(n_byz);
            for i in 0..n_honest {
                let mut picks: Vec<usize> = (0..n_byz).collect();
                for slot in 0..slots {
                    if rng.random::<f64>() < edge_prob {
                        let j = slot + rng.random_range(0..(n_byz - slot));
                        picks.swap(slot, j);
                        edges.push((i, n_honest + picks[slot]));
                    }
                }
            }
            for u in 0..n_byz {
                for v in (u + 1)..n_byz {
                    edges.push((n_honest + u, n_honest + v));
                }
            }
            let topo = Topology::new(n_honest + n_byz, edges, n_honest..(n_honest + n_byz))?;
            let report = topo.verify_gamma_membership(mu_min, b)?;
            best_mu2 = best_mu2.max(report.honest_mu2);
            if report.member {
                return Ok(topo);
            }
        }
        Err(GraphError::GammaRejection { mu_min, b, attempts: GAMMA_ATTEMPTS, best_mu2 })
    }

    /// Induced subgraph on honest nodes, relabeled `0..h` in ascending
    /// original order, together with the index translation.
    pub fn honest_subgraph(&self) -> Result<(Topology, IndexMap), GraphError> {
        let honest = self.honest_nodes();
        if honest.is_empty() {
            return Err(GraphError::NoHonestNodes);
        }
        let mut old_to_new = vec![None; self.n];
        for (new, &old) in honest.iter().enumerate() {
            old_to_new[old] = Some(new);
        }
        let edges = self.edges.iter().filter_map(|&(u, v)| {
            match (old_to_new[u], old_to_new[v]) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            }
        });
        let sub = Topology::new(honest.len(), edges, [])?;
        Ok((sub, IndexMap { new_to_old: honest, old_to_new }))
    }

    /// Unweighted Laplacian `L = D - A`.
    pub fn laplacian(&self) -> Laplacian {
        let mut l = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            l[[i, i]] = self.adj[i].len() as f64;
        }
        for &(u, v) in &self.edges {
            l[[u, v]] = -1.0;
            l[[v, u]] = -1.0;
        }
        Laplacian(l)
    }

    /// Eigenstructure of this graph's Laplacian. See [`SpectralInfo`] for
    /// the conventions on disconnected graphs and the Fiedler vector.
    pub fn spectral_info(&self) -> Result<SpectralInfo, GraphError> {
        if self.n == 0 {
            return Err(GraphError::Empty);
        }
        let eig = sym_eigen(self.laplacian().matrix())?;
        let mu_max = *eig.values.last().expect("n >= 1");
        let kernel_tol = 1e-9 * (1.0 + mu_max.abs());
        let kernel_dim = eig.values.iter().take_while(|&&v| v.abs() <= kernel_tol).count();
        // The Laplacian is PSD with 1 in its kernel; a kernel_dim of 0 would
        // mean the solver leaked, treat defensively as 1.
        let kernel_dim = kernel_dim.max(1);
        let connected = kernel_dim == 1;
        let (mu2, fiedler) = if !connected || self.n == 1 {
            (0.0, None)
        } else {
            let mu2 = eig.values[1];
            let mult_tol = 1e-8 * (1.0 + mu_max.abs());
            // Under multiplicity any basis vector is a valid Fiedler
            // direction; take the lexicographically largest normalized one
            // so the choice is deterministic.
            let mut best: Option<Array1<f64>> = None;
            for k in 1..self.n {
                if (eig.values[k] - mu2).abs() > mult_tol {
                    break;
                }
                let cand = eig.vectors.column(k).to_owned();
                best = match best {
                    None => Some(cand),
                    Some(cur) => {
                        if lex_greater(&cand, &cur) {
                            Some(cand)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
            (mu2, best)
        };
        let gamma = if mu_max > 0.0 { mu2 / mu_max } else { 0.0 };
        Ok(SpectralInfo { mu2, mu_max, gamma, fiedler, kernel_dim, eigenvalues: eig.values })
    }

    /// Checks membership in `Gamma(mu_min, b)`: honest-subgraph `mu2` at
    /// least `mu_min` (up to 1e-9 slack) and at most `b` Byzantine neighbors
    /// per honest node.
    pub fn verify_gamma_membership(&self, mu_min: f64, b: usize) -> Result<GammaReport, GraphError> {
        let (sub, _) = self.honest_subgraph()?;
        let spec = sub.spectral_info()?;
        let max_byz = self.max_byz_neighbors();
        Ok(GammaReport {
            member: spec.mu2 + SPECTRAL_SLACK >= mu_min && max_byz <= b,
            honest_mu2: spec.mu2,
            max_byz_neighbors: max_byz,
            required_mu_min: mu_min,
            allowed_b: b,
        })
    }

    /// Parses the plain text exchange format: optional `nodes: N` and
    /// `byzantine: i,j,k` header lines, then one `u v` edge per line. Blank
    /// lines and `#` comments are skipped. Without a `nodes:` header the
    /// node count is inferred as one past the largest mentioned id.
    pub fn from_edge_list_str(text: &str) -> Result<Self, GraphError> {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut byz: Vec<usize> = Vec::new();
        let mut explicit_n: Option<usize> = None;
        let mut saw_byz_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("nodes:") {
                if explicit_n.is_some() {
                    return Err(GraphError::EdgeListParse {
                        line: line_no,
                        msg: "duplicate nodes header".into(),
                    });
                }
                explicit_n = Some(rest.trim().parse().map_err(|e| GraphError::EdgeListParse {
                    line: line_no,
                    msg: format!("bad node count: {e}"),
                })?);
                continue;
            }
            if let Some(rest) = line.strip_prefix("byzantine:") {
                if saw_byz_header {
                    return Err(GraphError::EdgeListParse {
                        line: line_no,
                        msg: "duplicate byzantine header".into(),
                    });
                }
                saw_byz_header = true;
                let rest = rest.trim();
                if !rest.is_empty() {
                    for tok in rest.split(',') {
                        byz.push(tok.trim().parse().map_err(|e| GraphError::EdgeListParse {
                            line: line_no,
                            msg: format!("bad byzantine id {tok:?}: {e}"),
                        })?);
                    }
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let (u, v) = match (parts.next(), parts.next(), parts.next()) {
                (Some(u), Some(v), None) => (u, v),
                _ => {
                    return Err(GraphError::EdgeListParse {
                        line: line_no,
                        msg: format!("expected `u v`, got {line:?}"),
                    })
                }
            };
            let u: usize = u.parse().map_err(|e| GraphError::EdgeListParse {
                line: line_no,
                msg: format!("bad endpoint {u:?}: {e}"),
            })?;
            let v: usize = v.parse().map_err(|e| GraphError::EdgeListParse {
                line: line_no,
                msg: format!("bad endpoint {v:?}: {e}"),
            })?;
            if u == v {
                return Err(GraphError::EdgeListParse {
                    line: line_no,
                    msg: format!("self loop at node {u}"),
                });
            }
            edges.push((u, v));
        }
        let seen_max = edges
            .iter()
            .flat_map(|&(u, v)| [u, v])
            .chain(byz.iter().copied())
            .max()
            .map(|m| m + 1)
            .unwrap_or(0);
        let n = match explicit_n {
            Some(n) => {
                if seen_max > n {
                    return Err(GraphError::EdgeListParse {
                        line: 0,
                        msg: format!("node id {} exceeds declared count {n}", seen_max - 1),
                    });
                }
                n
            }
            None => seen_max,
        };
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Topology::new(n, edges, byz)
    }

    /// Inverse of [`Topology::from_edge_list_str`]; round-trips exactly.
    pub fn to_edge_list_str(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nodes: {}", self.n);
        if !self.byzantine.is_empty() {
            let ids: Vec<String> = self.byzantine.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "byzantine: {}", ids.join(","));
        }
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

fn lex_greater(a: &Array1<f64>, b: &Array1<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    false
}

//! Byzantine message forging: attack directions, node-centered delivery,
//! scaling search, and the receiver-echo breakdown attack.
//!
//! The adversary is omniscient and colluding: every Byzantine sender reads
//! the exact honest states each round and all senders attacking a target
//! declare the identical vector. Directions are pure functions of the
//! [`OmniscientView`]; the scaling search simulates candidate rounds on
//! scratch copies and never touches live state.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{apply_rule, AggregateError, Inbox, ParamMatrix, RuleConfig};
use crate::graph::{IndexMap, Topology};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("coordinate-std attack needs at least two honest nodes, got {0}")]
    TooFewHonest(usize),
    #[error("Fiedler-direction attack needs a connected honest subgraph")]
    NoFiedler,
    #[error("scaling grid is empty")]
    EmptyGrid,
    #[error("non-finite scaling candidate {0}")]
    BadScaling(f64),
    #[error("declaration byzantine {byz} -> honest {honest}: {problem}")]
    Declaration {
        byz: usize,
        honest: usize,
        problem: &'static str,
    },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Attack family. `None` and `TwoWorld` both echo the receiver's own value;
/// `None` is the neutral baseline while `TwoWorld` names the breakdown
/// construction where the echo provably freezes clipping and trimming rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Alie,
    Foe,
    Dissensus,
    SpectralHeterogeneity,
    TwoWorld,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Alie => "alie",
            AttackKind::Foe => "foe",
            AttackKind::Dissensus => "dissensus",
            AttackKind::SpectralHeterogeneity => "sph",
            AttackKind::TwoWorld => "two_world",
        }
    }
}

/// How the attack magnitude is chosen. `Fixed` multiplies the raw direction
/// as-is. `Grid` holds dimensionless candidates: each is divided by
/// `max(max_i |a_i|, 1e-12)` before use, so candidate `c` declares at offset
/// norm `<= c` regardless of the state's scale, and the searched winner is
/// reported in candidate units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingSearch {
    Fixed(f64),
    Grid(Vec<f64>),
}

impl ScalingSearch {
    /// Candidates spanning sub-threshold to fully-clipped regimes.
    pub fn default_grid() -> Self {
        ScalingSearch::Grid(vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    }
}

impl Default for ScalingSearch {
    fn default() -> Self {
        Self::default_grid()
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default)]
    pub scaling: ScalingSearch,
    /// Declare `x_i + zeta a_i` to target i; false recenters on the honest
    /// mean instead (`mean + zeta a_i`).
    #[serde(default = "default_true")]
    pub centered_on_target: bool,
    /// Search a separate grid winner per target instead of one global zeta.
    #[serde(default)]
    pub per_node_zeta: bool,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec {
            kind,
            scaling: ScalingSearch::default(),
            centered_on_target: true,
            per_node_zeta: false,
        }
    }
}

/// Ground truth the colluding adversary reads each round. Holds references
/// only; attacks cannot mutate honest state by construction.
#[derive(Clone, Copy)]
pub struct OmniscientView<'a> {
    /// Full labeled topology, honest and Byzantine nodes.
    pub topo: &'a Topology,
    /// Honest subgraph in compact labels.
    pub honest: &'a Topology,
    /// Label translation between `topo` and `honest`.
    pub map: &'a IndexMap,
    /// Honest parameters, row i in `honest` labels.
    pub x: &'a ParamMatrix,
    /// Fiedler vector of the honest subgraph, when connected.
    pub fiedler: Option<&'a Array1<f64>>,
}

/// Coordinate-wise population standard deviation of the honest rows, the
/// same direction for every target.
pub fn alie_direction(view: &OmniscientView) -> Result<Array2<f64>, AdversaryError> {
    let n = view.x.nrows();
    if n < 2 {
        return Err(AdversaryError::TooFewHonest(n));
    }
    let mean = view.x.mean_row();
    let mut var = Array1::<f64>::zeros(view.x.dim());
    for i in 0..n {
        let dev = &view.x.row(i) - &mean;
        var += &dev.mapv(|t| t * t);
    }
    let sigma = var.mapv(|t| (t / n as f64).sqrt());
    Ok(broadcast_rows(&sigma, n))
}

/// Negated honest mean, the same direction for every target.
pub fn foe_direction(view: &OmniscientView) -> Array2<f64> {
    let mean = view.x.mean_row();
    broadcast_rows(&mean.mapv(|t| -t), view.x.nrows())
}

/// Row i of `W_H X_H`, i.e. `sum_{j ~ i} (x_i - x_j)`: pushes each node
/// along its current disagreement with its neighborhood.
pub fn dissensus_direction(view: &OmniscientView) -> Array2<f64> {
    let n = view.x.nrows();
    let mut a = Array2::<f64>::zeros((n, view.x.dim()));
    for i in 0..n {
        let xi = view.x.row(i);
        let mut row = a.row_mut(i);
        for &j in view.honest.neighbors(i) {
            row += &(&xi - &view.x.row(j));
        }
    }
    a
}

/// Row i of the rank-one field `e e^T X_H` built from the Fiedler vector e:
/// pushes along the slowest-mixing disagreement mode instead of the current
/// one. Sign-invariant in e because e only enters as an outer product.
pub fn sph_direction(view: &OmniscientView) -> Result<Array2<f64>, AdversaryError> {
    let e = view.fiedler.ok_or(AdversaryError::NoFiedler)?;
    let proj = e.dot(view.x.as_array());
    let n = view.x.nrows();
    let mut a = Array2::<f64>::zeros((n, view.x.dim()));
    for i in 0..n {
        let mut row = a.row_mut(i);
        row.assign(&proj);
        row *= e[i];
    }
    Ok(a)
}

/// Direction matrix for `kind`, one row per honest target. Echo attacks
/// (`None`, `TwoWorld`) have no direction and return zeros.
pub fn attack_directions(
    view: &OmniscientView,
    kind: AttackKind,
) -> Result<Array2<f64>, AdversaryError> {
    match kind {
        AttackKind::None | AttackKind::TwoWorld => {
            Ok(Array2::zeros((view.x.nrows(), view.x.dim())))
        }
        AttackKind::Alie => alie_direction(view),
        AttackKind::Foe => Ok(foe_direction(view)),
        AttackKind::Dissensus => Ok(dissensus_direction(view)),
        AttackKind::SpectralHeterogeneity => sph_direction(view),
    }
}

/// Forged declarations for one round. `messages` is keyed by old labels
/// `(byzantine sender, honest receiver)`, one entry per such graph edge.
#[derive(Debug, Clone)]
pub struct ForgeOutcome {
    pub messages: BTreeMap<(usize, usize), Array1<f64>>,
    /// Winning grid candidate (or the fixed value); per-node search reports
    /// the mean over targets. Echo attacks report 0.
    pub zeta: f64,
    /// Largest direction norm before grid normalization.
    pub dir_max_norm: f64,
}

/// Computes what every Byzantine sender declares to each honest neighbor.
/// Echo attacks declare the receiver's own current value; directional
/// attacks declare `center_i + zeta a_i` with `center_i` the receiver's
/// value (or the honest mean in legacy mode) and zeta per [`ScalingSearch`].
pub fn forge_messages(
    view: &OmniscientView,
    spec: &AttackSpec,
    rule_cfg: &RuleConfig,
) -> Result<ForgeOutcome, AdversaryError> {
    if matches!(spec.kind, AttackKind::None | AttackKind::TwoWorld) {
        let messages = echo_messages(view);
        return Ok(ForgeOutcome { messages, zeta: 0.0, dir_max_norm: 0.0 });
    }
    let dirs = attack_directions(view, spec.kind)?;
    let dir_max_norm = max_row_norm(&dirs);
    if view.topo.byzantine().is_empty() {
        return Ok(ForgeOutcome { messages: BTreeMap::new(), zeta: 0.0, dir_max_norm });
    }
    let (raw, effective) = match &spec.scaling {
        ScalingSearch::Fixed(z) => {
            if !z.is_finite() {
                return Err(AdversaryError::BadScaling(*z));
            }
            (*z, vec![*z; view.x.nrows()])
        }
        ScalingSearch::Grid(candidates) => {
            search_scaling(view, spec, rule_cfg, candidates, &dirs, dir_max_norm)?
        }
    };
    let messages = declared_messages(view, spec, &dirs, &effective);
    Ok(ForgeOutcome { messages, zeta: raw, dir_max_norm })
}

/// Linear search over grid candidates: simulates one aggregation round per
/// candidate on a scratch copy and scores the honest mean squared distance
/// to the pre-round honest mean. Returns (reported candidate, effective
/// per-target multipliers). Ties break toward the smaller candidate; the
/// per-node flag lets each target keep its own winner.
fn search_scaling(
    view: &OmniscientView,
    spec: &AttackSpec,
    rule_cfg: &RuleConfig,
    candidates: &[f64],
    dirs: &Array2<f64>,
    dir_max_norm: f64,
) -> Result<(f64, Vec<f64>), AdversaryError> {
    if candidates.is_empty() {
        return Err(AdversaryError::EmptyGrid);
    }
    if let Some(&bad) = candidates.iter().find(|c| !c.is_finite()) {
        return Err(AdversaryError::BadScaling(bad));
    }
    let mut grid = candidates.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let scale = 1.0 / dir_max_norm.max(1e-12);

    let n = view.x.nrows();
    let mean_before = view.x.mean_row();
    // damage[c][i] = |y_i - mean_before|^2 under candidate c.
    let mut damage = Vec::with_capacity(grid.len());
    for &cand in &grid {
        let effective = vec![cand * scale; n];
        let messages = declared_messages(view, spec, dirs, &effective);
        let inbox = assemble_inbox(view.honest, view.topo, view.map, view.x, &messages)?;
        let y = apply_rule(view.x, &inbox, rule_cfg)?;
        let per_node: Vec<f64> = (0..n)
            .map(|i| {
                let dev = &y.row(i) - &mean_before;
                dev.dot(&dev)
            })
            .collect();
        damage.push(per_node);
    }

    if spec.per_node_zeta {
        let mut effective = vec![0.0; n];
        let mut raw_sum = 0.0;
        for i in 0..n {
            let mut best = 0usize;
            for c in 1..grid.len() {
                if damage[c][i] > damage[best][i] {
                    best = c;
                }
            }
            effective[i] = grid[best] * scale;
            raw_sum += grid[best];
        }
        Ok((raw_sum / n as f64, effective))
    } else {
        let mut best = 0usize;
        let mut best_total: f64 = damage[0].iter().sum();
        for (c, per_target) in damage.iter().enumerate().skip(1) {
            let total: f64 = per_target.iter().sum();
            if total > best_total {
                best = c;
                best_total = total;
            }
        }
        Ok((grid[best], vec![grid[best] * scale; n]))
    }
}

/// Builds the per-receiver inbox in compact honest labels: honest senders
/// forward their true rows, Byzantine senders (ids `|H| + rank`) inject
/// `messages`. Every Byzantine-to-honest edge must be covered exactly.
pub fn assemble_inbox(
    honest: &Topology,
    topo: &Topology,
    map: &IndexMap,
    x: &ParamMatrix,
    messages: &BTreeMap<(usize, usize), Array1<f64>>,
) -> Result<Inbox, AdversaryError> {
    let h = x.nrows();
    let byz_rank: BTreeMap<usize, usize> =
        topo.byzantine().iter().enumerate().map(|(r, &b)| (b, r)).collect();
    for &(byz, target) in messages.keys() {
        if !topo.is_byzantine(byz) {
            return Err(AdversaryError::Declaration {
                byz,
                honest: target,
                problem: "sender is not Byzantine",
            });
        }
        if topo.is_byzantine(target) {
            return Err(AdversaryError::Declaration {
                byz,
                honest: target,
                problem: "receiver is not honest",
            });
        }
        if !topo.neighbors(byz).contains(&target) {
            return Err(AdversaryError::Declaration {
                byz,
                honest: target,
                problem: "no such edge",
            });
        }
    }
    let mut entries = Vec::with_capacity(h);
    for i in 0..h {
        let old = map.new_to_old[i];
        let mut msgs: Vec<(usize, Array1<f64>)> = honest
            .neighbors(i)
            .iter()
            .map(|&j| (j, x.row(j).to_owned()))
            .collect();
        for &nb in topo.neighbors(old) {
            if topo.is_byzantine(nb) {
                let declared = messages.get(&(nb, old)).ok_or(AdversaryError::Declaration {
                    byz: nb,
                    honest: old,
                    problem: "missing declaration for this edge",
                })?;
                msgs.push((h + byz_rank[&nb], declared.clone()));
            }
        }
        entries.push(msgs);
    }
    Ok(Inbox::new(entries)?)
}

fn echo_messages(view: &OmniscientView) -> BTreeMap<(usize, usize), Array1<f64>> {
    let mut messages = BTreeMap::new();
    for &byz in view.topo.byzantine() {
        for &nb in view.topo.neighbors(byz) {
            if let Some(new) = view.map.new_of(nb) {
                messages.insert((byz, nb), view.x.row(new).to_owned());
            }
        }
    }
    messages
}

fn declared_messages(
    view: &OmniscientView,
    spec: &AttackSpec,
    dirs: &Array2<f64>,
    effective: &[f64],
) -> BTreeMap<(usize, usize), Array1<f64>> {
    let mean = view.x.mean_row();
    let mut messages = BTreeMap::new();
    for &byz in view.topo.byzantine() {
        for &nb in view.topo.neighbors(byz) {
            if let Some(new) = view.map.new_of(nb) {
                let center = if spec.centered_on_target {
                    view.x.row(new).to_owned()
                } else {
                    mean.clone()
                };
                let value = center + &(&dirs.row(new) * effective[new]);
                messages.insert((byz, nb), value);
            }
        }
    }
    messages
}

fn broadcast_rows(v: &Array1<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((n, v.len()));
    for mut row in out.rows_mut() {
        row.assign(v);
    }
    out
}

fn max_row_norm(a: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Rule;
    use crate::graph::SpectralInfo;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    struct Fixture {
        topo: Topology,
        honest: Topology,
        map: IndexMap,
        x: ParamMatrix,
        spectral: SpectralInfo,
    }

    impl Fixture {
        fn new(topo: Topology, rows: &[&[f64]]) -> Self {
            let (honest, map) = topo.honest_subgraph().unwrap();
            let spectral = honest.spectral_info().unwrap();
            let x = ParamMatrix::from_rows(
                &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            )
            .unwrap();
            Fixture { topo, honest, map, x, spectral }
        }

        fn view(&self) -> OmniscientView<'_> {
            OmniscientView {
                topo: &self.topo,
                honest: &self.honest,
                map: &self.map,
                x: &self.x,
                fiedler: self.spectral.fiedler.as_ref(),
            }
        }
    }

    /// Honest path 0-1-2 with states 0,1,2; no Byzantine nodes.
    fn honest_path3() -> Fixture {
        let topo = Topology::new(3, [(0, 1), (1, 2)], []).unwrap();
        Fixture::new(topo, &[&[0.0], &[1.0], &[2.0]])
    }

    /// Complete graph on 0..3 where node 3 is Byzantine, states 0,1,2.
    fn attacked_triangle() -> Fixture {
        let topo =
            Topology::new(4, [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)], [3]).unwrap();
        Fixture::new(topo, &[&[0.0], &[1.0], &[2.0]])
    }

    #[test]
    fn alie_is_the_population_std() {
        let topo = Topology::new(2, [(0, 1)], []).unwrap();
        let fx = Fixture::new(topo, &[&[0.0], &[2.0]]);
        let a = alie_direction(&fx.view()).unwrap();
        assert_abs_diff_eq!(a[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[[1, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn alie_scales_linearly_and_dies_at_consensus() {
        let topo = Topology::new(2, [(0, 1)], []).unwrap();
        let fx = Fixture::new(topo, &[&[0.0, 5.0], &[6.0, 5.0]]);
        let a = alie_direction(&fx.view()).unwrap();
        assert_abs_diff_eq!(a[[0, 0]], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[[0, 1]], 0.0, epsilon = 1e-12);

        let fx3 = Fixture::new(
            Topology::new(2, [(0, 1)], []).unwrap(),
            &[&[0.0, 15.0], &[18.0, 15.0]],
        );
        let a3 = alie_direction(&fx3.view()).unwrap();
        assert_abs_diff_eq!(a3[[0, 0]], 3.0 * a[[0, 0]], epsilon = 1e-12);

        let flat = Fixture::new(
            Topology::new(2, [(0, 1)], []).unwrap(),
            &[&[7.0], &[7.0]],
        );
        let z = alie_direction(&flat.view()).unwrap();
        assert_abs_diff_eq!(z[[0, 0]], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn alie_rejects_a_single_honest_node() {
        let topo = Topology::new(2, [(0, 1)], [1]).unwrap();
        let fx = Fixture::new(topo, &[&[1.0]]);
        assert!(matches!(
            alie_direction(&fx.view()),
            Err(AdversaryError::TooFewHonest(1))
        ));
    }

    #[test]
    fn foe_negates_the_mean_for_every_target() {
        let topo = Topology::new(2, [(0, 1)], []).unwrap();
        let fx = Fixture::new(topo, &[&[1.0, 0.0], &[3.0, 0.0]]);
        let a = foe_direction(&fx.view());
        for i in 0..2 {
            assert_abs_diff_eq!(a[[i, 0]], -2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a[[i, 1]], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dissensus_is_the_laplacian_row_and_sums_to_zero() {
        let fx = honest_path3();
        let a = dissensus_direction(&fx.view());
        assert_abs_diff_eq!(a[[0, 0]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[[1, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[[2, 0]], 1.0, epsilon = 1e-12);
        // Laplacian columns sum to zero, so the directions cancel globally.
        let col_sum: f64 = (0..3).map(|i| a[[i, 0]]).sum();
        assert_abs_diff_eq!(col_sum, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sph_matches_the_rank_one_product_on_the_path() {
        let fx = honest_path3();
        let a = sph_direction(&fx.view()).unwrap();
        assert_abs_diff_eq!(a[[0, 0]], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a[[1, 0]], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a[[2, 0]], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sph_is_invariant_to_the_fiedler_sign() {
        let fx = honest_path3();
        let a = sph_direction(&fx.view()).unwrap();
        let flipped = fx.spectral.fiedler.as_ref().unwrap().mapv(|t| -t);
        let mut view = fx.view();
        view.fiedler = Some(&flipped);
        let a2 = sph_direction(&view).unwrap();
        assert_abs_diff_eq!(
            (&a - &a2).iter().map(|t| t.abs()).fold(0.0, f64::max),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sph_kills_consensus_states() {
        let topo = Topology::new(3, [(0, 1), (1, 2)], []).unwrap();
        let fx = Fixture::new(topo, &[&[4.0, -1.0], &[4.0, -1.0], &[4.0, -1.0]]);
        let a = sph_direction(&fx.view()).unwrap();
        assert!(a.iter().all(|t| t.abs() < 1e-9));
    }

    #[test]
    fn sph_requires_a_fiedler_vector() {
        let fx = honest_path3();
        let mut view = fx.view();
        view.fiedler = None;
        assert!(matches!(sph_direction(&view), Err(AdversaryError::NoFiedler)));
    }

    #[test]
    fn echo_attacks_declare_the_receiver_value() {
        let fx = attacked_triangle();
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        for kind in [AttackKind::None, AttackKind::TwoWorld] {
            let out = forge_messages(&fx.view(), &AttackSpec::new(kind), &cfg).unwrap();
            assert_eq!(out.messages.len(), 3);
            for (&(_, target), v) in &out.messages {
                assert_abs_diff_eq!(v[0], target as f64, epsilon = 1e-15);
            }
            assert_eq!(out.zeta, 0.0);
        }
    }

    #[test]
    fn two_world_on_the_three_clique_tells_each_clique_its_own_story() {
        let topo = Topology::three_clique_ghb(3, 2).unwrap();
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![if i < 3 { 0.0 } else { 1.0 }]).collect();
        let fx = Fixture::new(
            topo,
            &rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>(),
        );
        let cfg = RuleConfig::new(Rule::CgPlus, 2, 0.1).unwrap();
        let out =
            forge_messages(&fx.view(), &AttackSpec::new(AttackKind::TwoWorld), &cfg).unwrap();
        assert!(!out.messages.is_empty());
        for (&(_, target), v) in &out.messages {
            let expect = if target < 3 { 0.0 } else { 1.0 };
            assert_abs_diff_eq!(v[0], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn fixed_scaling_applies_the_direction_literally() {
        let fx = attacked_triangle();
        let mut spec = AttackSpec::new(AttackKind::Foe);
        spec.scaling = ScalingSearch::Fixed(1.0);
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        let out = forge_messages(&fx.view(), &spec, &cfg).unwrap();
        // mean = 1, direction -1: target i receives x_i - 1.
        for (&(_, target), v) in &out.messages {
            assert_abs_diff_eq!(v[0], target as f64 - 1.0, epsilon = 1e-12);
        }
        assert_eq!(out.zeta, 1.0);
        assert_abs_diff_eq!(out.dir_max_norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn legacy_mode_centers_on_the_mean() {
        let fx = attacked_triangle();
        let mut spec = AttackSpec::new(AttackKind::Foe);
        spec.scaling = ScalingSearch::Fixed(2.0);
        spec.centered_on_target = false;
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        let out = forge_messages(&fx.view(), &spec, &cfg).unwrap();
        // mean + 2 * (-mean) = -mean = -1 for every target.
        for v in out.messages.values() {
            assert_abs_diff_eq!(v[0], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn colluders_declare_identical_vectors_per_target() {
        let topo = Topology::new(
            4,
            [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            [2, 3],
        )
        .unwrap();
        let fx = Fixture::new(topo, &[&[0.0], &[5.0]]);
        let cfg = RuleConfig::new(Rule::CgPlus, 2, 0.25).unwrap();
        let out =
            forge_messages(&fx.view(), &AttackSpec::new(AttackKind::Foe), &cfg).unwrap();
        for target in [0usize, 1] {
            let v2 = &out.messages[&(2, target)];
            let v3 = &out.messages[&(3, target)];
            assert_eq!(v2, v3);
        }
    }

    #[test]
    fn grid_search_prefers_the_damaging_candidate() {
        let fx = attacked_triangle();
        let mut spec = AttackSpec::new(AttackKind::Foe);
        spec.scaling = ScalingSearch::Grid(vec![0.0, 4.0]);
        // Plain gossip swallows the forgery whole, so bigger is worse.
        let cfg = RuleConfig::new(Rule::Gossip, 1, 0.1).unwrap();
        let out = forge_messages(&fx.view(), &spec, &cfg).unwrap();
        assert_eq!(out.zeta, 4.0);
    }

    #[test]
    fn grid_search_ties_break_toward_the_smallest() {
        // Consensus state: every direction is zero, all candidates tie.
        let topo =
            Topology::new(4, [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)], [3]).unwrap();
        let fx = Fixture::new(topo, &[&[2.0], &[2.0], &[2.0]]);
        let mut spec = AttackSpec::new(AttackKind::Alie);
        spec.scaling = ScalingSearch::Grid(vec![8.0, 0.5, 0.25]);
        let cfg = RuleConfig::new(Rule::Gossip, 1, 0.1).unwrap();
        let out = forge_messages(&fx.view(), &spec, &cfg).unwrap();
        assert_eq!(out.zeta, 0.25);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let fx = attacked_triangle();
        let mut spec = AttackSpec::new(AttackKind::Foe);
        spec.scaling = ScalingSearch::Grid(vec![]);
        let cfg = RuleConfig::new(Rule::Gossip, 1, 0.1).unwrap();
        assert!(matches!(
            forge_messages(&fx.view(), &spec, &cfg),
            Err(AdversaryError::EmptyGrid)
        ));
    }

    #[test]
    fn per_node_search_never_does_worse_on_average() {
        let fx = attacked_triangle();
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        let mean_before = fx.x.mean_row();
        let mut damages = Vec::new();
        for per_node in [false, true] {
            let mut spec = AttackSpec::new(AttackKind::Dissensus);
            spec.per_node_zeta = per_node;
            let out = forge_messages(&fx.view(), &spec, &cfg).unwrap();
            let inbox =
                assemble_inbox(&fx.honest, &fx.topo, &fx.map, &fx.x, &out.messages).unwrap();
            let y = apply_rule(&fx.x, &inbox, &cfg).unwrap();
            let damage: f64 = (0..3)
                .map(|i| {
                    let dev = &y.row(i) - &mean_before;
                    dev.dot(&dev)
                })
                .sum();
            damages.push(damage);
        }
        assert!(damages[1] >= damages[0] - 1e-12);
    }

    #[test]
    fn forging_does_not_touch_honest_state() {
        let fx = attacked_triangle();
        let before = fx.x.as_array().clone();
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        forge_messages(&fx.view(), &AttackSpec::new(AttackKind::SpectralHeterogeneity), &cfg)
            .unwrap();
        assert_eq!(fx.x.as_array(), &before);
    }

    #[test]
    fn inbox_assembly_validates_edge_coverage() {
        let fx = attacked_triangle();
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        let out =
            forge_messages(&fx.view(), &AttackSpec::new(AttackKind::Foe), &cfg).unwrap();

        let mut missing = out.messages.clone();
        missing.remove(&(3, 1));
        assert!(matches!(
            assemble_inbox(&fx.honest, &fx.topo, &fx.map, &fx.x, &missing),
            Err(AdversaryError::Declaration { byz: 3, honest: 1, .. })
        ));

        let mut extraneous = out.messages.clone();
        extraneous.insert((1, 0), array![9.0]);
        assert!(matches!(
            assemble_inbox(&fx.honest, &fx.topo, &fx.map, &fx.x, &extraneous),
            Err(AdversaryError::Declaration { byz: 1, honest: 0, .. })
        ));
    }

    #[test]
    fn assembled_inbox_relabels_byzantine_senders_past_the_honest_range() {
        // Nodes 0,2 honest; node 1 Byzantine between them.
        let topo = Topology::new(3, [(0, 1), (1, 2), (0, 2)], [1]).unwrap();
        let fx = Fixture::new(topo, &[&[0.0], &[10.0]]);
        let cfg = RuleConfig::new(Rule::CgPlus, 1, 0.25).unwrap();
        let out =
            forge_messages(&fx.view(), &AttackSpec::new(AttackKind::None), &cfg).unwrap();
        let inbox =
            assemble_inbox(&fx.honest, &fx.topo, &fx.map, &fx.x, &out.messages).unwrap();
        // Receiver 0 (old 0) hears honest 1 (old 2) and Byzantine sender 2.
        let senders: Vec<usize> = inbox.entries(0).iter().map(|(s, _)| *s).collect();
        assert_eq!(senders, vec![1, 2]);
        assert_abs_diff_eq!(inbox.entries(0)[1].1[0], 0.0, epsilon = 1e-15);
    }

    /// The slow-mode family: normalized `W (I - eta W)^{2s}` converges to
    /// the Fiedler projector as s grows, tying the one-step disagreement
    /// direction (s = 0) to the spectral direction (s -> infinity).
    #[test]
    fn slow_mode_family_converges_to_the_fiedler_projector() {
        use crate::eigen::sym_eigen;
        let honest = Topology::two_clique_bridge(5, 2).unwrap();
        let lap = honest.laplacian();
        let info = honest.spectral_info().unwrap();
        let w = lap.matrix().clone();
        let n = w.nrows();
        let eta = 1.0 / info.mu_max;
        let p = Array2::<f64>::eye(n) - &w.mapv(|t| eta * t);
        let u = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
        let mut m = w.clone();
        for _ in 0..25 {
            m = m.dot(&p).dot(&p);
            // The all-ones kernel neither decays nor carries signal; keep
            // rounding noise from piling up there while the rest shrinks.
            let mu = m.dot(&u);
            for i in 0..n {
                for j in 0..n {
                    m[[i, j]] -= mu[i] * u[j] + u[i] * mu[j] - u[i] * mu.dot(&u) * u[j];
                }
            }
        }
        // Repeated products drift off exact symmetry at machine scale.
        m = (&m + &m.t()).mapv(|t| 0.5 * t);
        let norm = sym_eigen(&m)
            .unwrap()
            .values
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let e = info.fiedler.as_ref().unwrap();
        let mut diff = m.mapv(|t| t / norm);
        for i in 0..n {
            for j in 0..n {
                diff[[i, j]] -= e[i] * e[j];
            }
        }
        let dist = sym_eigen(&diff)
            .unwrap()
            .values
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(dist < 1e-6, "operator distance {dist}");
    }
}

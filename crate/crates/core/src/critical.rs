//! Critical-index decomposition of block-structured coefficient vectors,
//! tail truncation for halfspaces over an edge, and the label-set checkers
//! built on top of both.
//!
//! A coefficient vector here is a map from big labels to length-`q` real
//! blocks. Sorting blocks by descending norm, the critical index is the
//! first position whose squared norm is at most `tau` times the remaining
//! suffix mass; everything before it is the critical set `C_tau`, capped at
//! `K` entries to give `C_tau_le_k`. Norm ties are broken by ascending label
//! id so every ordering-dependent set below is deterministic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Classifier, Halfspace};
use crate::gadget::GlobalSampler;
use crate::labelcover::{Hyperedge, LabelCoverInstance};
use crate::point::{Coord, Side};
use crate::report::{wilson_ci, McReport};
use crate::rng::mc_fold;
use crate::sum::csum;

#[derive(Debug, Error, PartialEq)]
pub enum CriticalError {
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    BadTau(f64),
    #[error("the critical-set cap must be at least 1")]
    BadCap,
    #[error("block {label} has length {got}, expected {q}")]
    BlockLength { label: u32, q: usize, got: usize },
    #[error("block {label} contains a non-finite entry")]
    NonFinite { label: u32 },
    #[error("coordinate slot {slot} does not fit {q} slots per block")]
    SlotOutOfRange { slot: u32, q: usize },
    #[error("edge index {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("vertex {0} is not on the edge")]
    VertexNotOnEdge(u32),
    #[error("labels {a} and {b} of vertex {vertex} collide under the edge projection")]
    NotNice { vertex: u32, a: u32, b: u32 },
}

/// Block-structured coefficient vector of one (side, vertex) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockVectorWire", into = "BlockVectorWire")]
pub struct BlockVector {
    owner: (Side, u32),
    q: usize,
    blocks: BTreeMap<u32, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BlockVectorWire {
    side: Side,
    vertex: u32,
    q: usize,
    blocks: Vec<(u32, Vec<f64>)>,
}

impl TryFrom<BlockVectorWire> for BlockVector {
    type Error = CriticalError;

    fn try_from(w: BlockVectorWire) -> Result<Self, CriticalError> {
        let mut v = BlockVector::new(w.side, w.vertex, w.q);
        for (label, block) in w.blocks {
            v.insert_block(label, block)?;
        }
        Ok(v)
    }
}

impl From<BlockVector> for BlockVectorWire {
    fn from(v: BlockVector) -> Self {
        BlockVectorWire {
            side: v.owner.0,
            vertex: v.owner.1,
            q: v.q,
            blocks: v.blocks.into_iter().collect(),
        }
    }
}

impl BlockVector {
    pub fn new(side: Side, vertex: u32, q: usize) -> Self {
        BlockVector { owner: (side, vertex), q, blocks: BTreeMap::new() }
    }

    pub fn insert_block(&mut self, label: u32, block: Vec<f64>) -> Result<(), CriticalError> {
        if block.len() != self.q {
            return Err(CriticalError::BlockLength { label, q: self.q, got: block.len() });
        }
        if block.iter().any(|x| !x.is_finite()) {
            return Err(CriticalError::NonFinite { label });
        }
        self.blocks.insert(label, block);
        Ok(())
    }

    /// Collects the coefficients of `h` on one (side, vertex) pair.
    pub fn from_halfspace(
        h: &Halfspace,
        side: Side,
        vertex: u32,
        q: usize,
    ) -> Result<Self, CriticalError> {
        let mut v = BlockVector::new(side, vertex, q);
        for (coord, &c) in &h.coeffs {
            if coord.side != side || coord.vertex != vertex {
                continue;
            }
            if coord.slot as usize >= q {
                return Err(CriticalError::SlotOutOfRange { slot: coord.slot, q });
            }
            if !c.is_finite() {
                return Err(CriticalError::NonFinite { label: coord.label });
            }
            v.blocks
                .entry(coord.label)
                .or_insert_with(|| vec![0.0; q])[coord.slot as usize] = c;
        }
        Ok(v)
    }

    pub fn owner(&self) -> (Side, u32) {
        self.owner
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.blocks.keys().copied()
    }

    pub fn block(&self, label: u32) -> Option<&[f64]> {
        self.blocks.get(&label).map(Vec::as_slice)
    }

    /// Squared norm of one block; absent blocks are zero.
    pub fn norm2(&self, label: u32) -> f64 {
        match self.blocks.get(&label) {
            Some(b) => csum(b.iter().map(|x| x * x)),
            None => 0.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        csum(self.blocks.keys().map(|&l| self.norm2(l)))
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// The descending-norm ordering of one vector together with everything the
/// critical-index definition derives from it. `i_tau` is 1-based; a vector
/// whose every prefix stays critical gets `i_tau = len + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalIndexReport {
    pub ordering: Vec<u32>,
    pub norms2: Vec<f64>,
    pub i_tau: usize,
    pub c_tau: BTreeSet<u32>,
    pub c_tau_le_k: BTreeSet<u32>,
    pub regular: bool,
}

impl CriticalIndexReport {
    /// Labels after the critical index, in ordering position order.
    pub fn residual_labels(&self) -> &[u32] {
        &self.ordering[self.i_tau - 1..]
    }

    /// Squared mass of the residual suffix.
    pub fn residual_mass(&self) -> f64 {
        csum(self.norms2[self.i_tau - 1..].iter().copied())
    }
}

fn check_tau_cap(tau: f64, cap: u64) -> Result<(), CriticalError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CriticalError::BadTau(tau));
    }
    if cap == 0 {
        return Err(CriticalError::BadCap);
    }
    Ok(())
}

/// Shared core over (label, squared norm) pairs, used for both full block
/// vectors and the grouped view of a halfspace.
fn index_from_norms(mut items: Vec<(u32, f64)>, tau: f64, cap: u64) -> CriticalIndexReport {
    items.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("norms are finite")
            .then(a.0.cmp(&b.0))
    });
    let len = items.len();
    // Suffix masses including position i, accumulated from the tail.
    let mut suffix = vec![0.0; len];
    let mut acc = crate::sum::CompensatedSum::new();
    for i in (0..len).rev() {
        acc.add(items[i].1);
        suffix[i] = acc.value();
    }
    let mut i_tau = len + 1;
    for i in 0..len {
        if items[i].1 <= tau * suffix[i] {
            i_tau = i + 1;
            break;
        }
    }
    let ordering: Vec<u32> = items.iter().map(|&(l, _)| l).collect();
    let norms2: Vec<f64> = items.iter().map(|&(_, n)| n).collect();
    let head = i_tau - 1;
    let c_tau: BTreeSet<u32> = ordering[..head].iter().copied().collect();
    let kept = head.min(cap.min(usize::MAX as u64) as usize);
    let c_tau_le_k: BTreeSet<u32> = ordering[..kept].iter().copied().collect();
    CriticalIndexReport { ordering, norms2, i_tau, c_tau, c_tau_le_k, regular: head == 0 }
}

/// Critical index, critical set, and its `cap`-capped prefix for one vector.
pub fn critical_index(
    c: &BlockVector,
    tau: f64,
    cap: u64,
) -> Result<CriticalIndexReport, CriticalError> {
    check_tau_cap(tau, cap)?;
    let items: Vec<(u32, f64)> = c.labels().map(|l| (l, c.norm2(l))).collect();
    Ok(index_from_norms(items, tau, cap))
}

/// Outcome of the geometric-decay check over the pre-critical prefix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub ok: bool,
    /// First violating 1-based ordering position pair, if any.
    pub violation: Option<(usize, usize)>,
}

/// Verifies the decay law on the vector's own critical-index report.
pub fn check_crit_decay(c: &BlockVector, tau: f64) -> Result<DecayCheck, CriticalError> {
    let report = critical_index(c, tau, 1)?;
    Ok(check_crit_decay_with(c, tau, &report))
}

/// Verifies `norm2(sigma(i2)) <= (1/tau) (1-tau)^(i2-i1) norm2(sigma(i1))`
/// for all position pairs `i1 < i2` up to the report's critical index. The
/// norms are recomputed from `c`, so an inconsistent injected report fails
/// against the real data.
pub fn check_crit_decay_with(
    c: &BlockVector,
    tau: f64,
    report: &CriticalIndexReport,
) -> DecayCheck {
    let end = report.i_tau.min(report.ordering.len());
    let norms: Vec<f64> = report.ordering[..end].iter().map(|&l| c.norm2(l)).collect();
    for i1 in 0..end {
        for i2 in i1 + 1..end {
            let allowed = (1.0 / tau) * (1.0 - tau).powi((i2 - i1) as i32) * norms[i1];
            if norms[i2] > allowed {
                return DecayCheck { ok: false, violation: Some((i1 + 1, i2 + 1)) };
            }
        }
    }
    DecayCheck { ok: true, violation: None }
}

pub(crate) fn side_of(edge: &Hyperedge, vertex: u32) -> Result<Side, CriticalError> {
    if edge.ex.contains(&vertex) {
        Ok(Side::X)
    } else if edge.ey.contains(&vertex) {
        Ok(Side::Y)
    } else {
        Err(CriticalError::VertexNotOnEdge(vertex))
    }
}

fn grouped_norms(h: &Halfspace, side: Side, vertex: u32) -> Vec<(u32, f64)> {
    let mut by_label: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (coord, &c) in &h.coeffs {
        if coord.side == side && coord.vertex == vertex {
            by_label.entry(coord.label).or_default().push(c);
        }
    }
    by_label
        .into_iter()
        .map(|(l, cs)| (l, csum(cs.iter().map(|x| x * x))))
        .collect()
}

/// Zeroes the critical blocks beyond the top `cap` on every edge vertex,
/// using each vertex's side on this edge. All other coefficients survive
/// untouched, and re-truncating the result is the identity.
pub fn truncate(
    h: &Halfspace,
    edge: &Hyperedge,
    tau: f64,
    cap: u64,
) -> Result<Halfspace, CriticalError> {
    check_tau_cap(tau, cap)?;
    let mut zeroed: BTreeSet<(Side, u32, u32)> = BTreeSet::new();
    for &v in &edge.vids {
        let side = side_of(edge, v)?;
        let report = index_from_norms(grouped_norms(h, side, v), tau, cap);
        for label in report.c_tau.difference(&report.c_tau_le_k) {
            zeroed.insert((side, v, *label));
        }
    }
    let coeffs: BTreeMap<Coord, f64> = h
        .coeffs
        .iter()
        .filter(|(c, _)| !zeroed.contains(&(c.side, c.vertex, c.label)))
        .map(|(&c, &w)| (c, w))
        .collect();
    Ok(Halfspace { coeffs, theta: h.theta, exact: h.exact })
}

/// Both side vectors of one vertex under one collection of halfspace
/// coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidePair {
    pub x: BlockVector,
    pub y: BlockVector,
}

impl SidePair {
    pub fn from_halfspace(h: &Halfspace, vertex: u32, q: usize) -> Result<Self, CriticalError> {
        Ok(SidePair {
            x: BlockVector::from_halfspace(h, Side::X, vertex, q)?,
            y: BlockVector::from_halfspace(h, Side::Y, vertex, q)?,
        })
    }

    pub fn empty(vertex: u32, q: usize) -> Self {
        SidePair {
            x: BlockVector::new(Side::X, vertex, q),
            y: BlockVector::new(Side::Y, vertex, q),
        }
    }
}

/// Per-vertex side pairs of one halfspace; one entry of a coefficient set.
pub type CoeffSet = BTreeMap<u32, SidePair>;

fn heavy_residual(c: &BlockVector, report: &CriticalIndexReport, d: u32) -> BTreeSet<u32> {
    let total = report.residual_mass();
    let threshold = total / (d as f64).powi(8);
    report
        .residual_labels()
        .iter()
        .copied()
        .filter(|&l| c.norm2(l) > threshold)
        .collect()
}

/// The influential label set of one vertex per halfspace, plus their union.
/// Each per-halfspace set joins the capped critical sets of both sides with
/// the residual blocks holding more than a `1/d^8` fraction of their side's
/// residual mass.
pub fn compute_iv_lv(
    pairs: &[SidePair],
    tau: f64,
    cap: u64,
    d: u32,
) -> Result<(Vec<BTreeSet<u32>>, BTreeSet<u32>), CriticalError> {
    check_tau_cap(tau, cap)?;
    let mut per_halfspace = Vec::with_capacity(pairs.len());
    let mut l_v = BTreeSet::new();
    for pair in pairs {
        let rx = critical_index(&pair.x, tau, cap)?;
        let ry = critical_index(&pair.y, tau, cap)?;
        let mut i_v: BTreeSet<u32> = rx.c_tau_le_k.union(&ry.c_tau_le_k).copied().collect();
        i_v.extend(heavy_residual(&pair.x, &rx, d));
        i_v.extend(heavy_residual(&pair.y, &ry, d));
        let limit = 2.0 * (cap as f64 + (d as f64).powi(8));
        assert!(i_v.len() as f64 <= limit, "influential set exceeded its size bound");
        l_v.extend(i_v.iter().copied());
        per_halfspace.push(i_v);
    }
    Ok((per_halfspace, l_v))
}

/// Outcome of the distinct-projection check of per-vertex label sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NicenessReport {
    pub nice: bool,
    /// `(vertex, label, label)` of the first collision found.
    pub witness: Option<(u32, u32, u32)>,
}

/// Checks that every pair of labels in each vertex's set projects to
/// distinct small labels on this edge.
pub fn niceness_check(
    instance: &LabelCoverInstance,
    edge: usize,
    l_sets: &BTreeMap<u32, BTreeSet<u32>>,
) -> Result<NicenessReport, CriticalError> {
    let e = instance
        .edges
        .get(edge)
        .ok_or(CriticalError::EdgeOutOfRange(edge))?;
    for (&v, labels) in l_sets {
        if !e.contains(v) {
            return Err(CriticalError::VertexNotOnEdge(v));
        }
        let mut seen: BTreeMap<u32, u32> = BTreeMap::new();
        for &label in labels {
            let j = e.project(v, label);
            if let Some(&prev) = seen.get(&j) {
                return Ok(NicenessReport { nice: false, witness: Some((v, prev, label)) });
            }
            seen.insert(j, label);
        }
    }
    Ok(NicenessReport { nice: true, witness: None })
}

/// One firing of a structural condition: vertices `u`, `v`, halfspace
/// indices `r` (at `u`) and `p` (at `v`), and the shared small label `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionWitness {
    pub u: u32,
    pub v: u32,
    pub r: usize,
    pub p: usize,
    pub j: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub condition_i: Vec<ConditionWitness>,
    pub condition_ii: Vec<ConditionWitness>,
}

impl StructuralReport {
    pub fn any(&self) -> bool {
        !self.condition_i.is_empty() || !self.condition_ii.is_empty()
    }
}

struct VertexView {
    vertex: u32,
    /// Projected capped critical sets of the side union, per halfspace.
    proj_top: Vec<BTreeSet<u32>>,
    /// Projected capped critical set of the X (resp. Y) side alone.
    proj_top_x: Vec<BTreeSet<u32>>,
    proj_top_y: Vec<BTreeSet<u32>>,
    /// Residual mass per small label and in total, per halfspace and side.
    resid_x: Vec<(BTreeMap<u32, f64>, f64)>,
    resid_y: Vec<(BTreeMap<u32, f64>, f64)>,
}

fn residual_by_small(
    e: &Hyperedge,
    v: u32,
    c: &BlockVector,
    report: &CriticalIndexReport,
) -> (BTreeMap<u32, f64>, f64) {
    let mut by_small: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &label in report.residual_labels() {
        by_small.entry(e.project(v, label)).or_default().push(c.norm2(label));
    }
    let folded: BTreeMap<u32, f64> =
        by_small.into_iter().map(|(j, ms)| (j, csum(ms))).collect();
    let total = csum(folded.values().copied());
    (folded, total)
}

/// Decides the two decoding conditions on one edge for a collection of
/// halfspace coefficient sets, reporting every witness of each.
///
/// Condition I: two distinct edge vertices whose projected capped critical
/// sets (side unions) intersect, for some halfspace pair. Condition II: a
/// small label in one vertex's projected top set whose preimage at another
/// vertex, avoiding that vertex's own projected top set on the matching
/// side, carries more than a `tau^4` fraction of that side's residual mass.
pub fn structural_conditions(
    instance: &LabelCoverInstance,
    edge: usize,
    coeff_sets: &[CoeffSet],
    tau: f64,
    cap: u64,
) -> Result<StructuralReport, CriticalError> {
    check_tau_cap(tau, cap)?;
    let e = instance
        .edges
        .get(edge)
        .ok_or(CriticalError::EdgeOutOfRange(edge))?;
    let ell = coeff_sets.len();
    let q = instance.big_labels as usize;
    let mut views = Vec::with_capacity(e.vids.len());
    for &v in &e.vids {
        let mut view = VertexView {
            vertex: v,
            proj_top: Vec::with_capacity(ell),
            proj_top_x: Vec::with_capacity(ell),
            proj_top_y: Vec::with_capacity(ell),
            resid_x: Vec::with_capacity(ell),
            resid_y: Vec::with_capacity(ell),
        };
        for set in coeff_sets {
            let fallback = SidePair::empty(v, q);
            let pair = set.get(&v).unwrap_or(&fallback);
            let rx = critical_index(&pair.x, tau, cap)?;
            let ry = critical_index(&pair.y, tau, cap)?;
            let px: BTreeSet<u32> =
                rx.c_tau_le_k.iter().map(|&i| e.project(v, i)).collect();
            let py: BTreeSet<u32> =
                ry.c_tau_le_k.iter().map(|&i| e.project(v, i)).collect();
            view.proj_top.push(px.union(&py).copied().collect());
            view.proj_top_x.push(px);
            view.proj_top_y.push(py);
            view.resid_x.push(residual_by_small(e, v, &pair.x, &rx));
            view.resid_y.push(residual_by_small(e, v, &pair.y, &ry));
        }
        views.push(view);
    }

    let mut condition_i = Vec::new();
    for a in 0..views.len() {
        for b in a + 1..views.len() {
            for r in 0..ell {
                for p in 0..ell {
                    for &j in views[a].proj_top[r].intersection(&views[b].proj_top[p]) {
                        condition_i.push(ConditionWitness {
                            u: views[a].vertex,
                            v: views[b].vertex,
                            r,
                            p,
                            j,
                        });
                    }
                }
            }
        }
    }

    let tau4 = tau.powi(4);
    let heavy = |resid: &(BTreeMap<u32, f64>, f64), j: u32| -> bool {
        let mass = resid.0.get(&j).copied().unwrap_or(0.0);
        mass > tau4 * resid.1
    };
    let mut condition_ii = Vec::new();
    for u_view in &views {
        for v_view in &views {
            if u_view.vertex == v_view.vertex {
                continue;
            }
            for r in 0..ell {
                for &j in &u_view.proj_top[r] {
                    let fires_x =
                        !v_view.proj_top_x[r].contains(&j) && heavy(&v_view.resid_x[r], j);
                    let fires_y =
                        !v_view.proj_top_y[r].contains(&j) && heavy(&v_view.resid_y[r], j);
                    if fires_x || fires_y {
                        condition_ii.push(ConditionWitness {
                            u: u_view.vertex,
                            v: v_view.vertex,
                            r,
                            p: r,
                            j,
                        });
                    }
                }
            }
        }
    }
    Ok(StructuralReport { condition_i, condition_ii })
}

/// Estimates how often truncation flips the classification under the fixed-
/// edge point distribution. Requires the edge to be nice with respect to the
/// halfspace's own influential sets; a halfspace with nothing to truncate
/// reports zero without sampling.
pub fn truncation_disagreement_mc(
    sampler: &GlobalSampler,
    edge: usize,
    h: &Halfspace,
    tau: f64,
    cap: u64,
    trials: u64,
    seed: u64,
) -> Result<McReport, CriticalError> {
    let inst = sampler.instance();
    let e = inst
        .edges
        .get(edge)
        .ok_or(CriticalError::EdgeOutOfRange(edge))?;
    let params = sampler.params();
    let mut l_sets: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &v in &e.vids {
        let pair = SidePair::from_halfspace(h, v, params.q)?;
        let (_, l_v) = compute_iv_lv(std::slice::from_ref(&pair), tau, cap, params.d)?;
        l_sets.insert(v, l_v);
    }
    let nice = niceness_check(inst, edge, &l_sets)?;
    if let Some((vertex, a, b)) = nice.witness {
        return Err(CriticalError::NotNice { vertex, a, b });
    }

    let bound = tau.powf(0.25) / (4.0 * params.k as f64);
    let op_params = serde_json::json!({
        "edge": edge, "tau": tau, "cap": cap, "k": params.k,
    });
    let truncated = truncate(h, e, tau, cap)?;
    if truncated.coeffs == h.coeffs {
        return Ok(McReport::new(0.0, [0.0, 0.0], seed, trials)
            .with_bound(bound)
            .with_params(op_params));
    }
    let flips = mc_fold(
        trials,
        0u64,
        |index| {
            let p = sampler
                .sample_on_edge_mixed(edge, seed, index)
                .expect("edge index already validated");
            (h.classify(&p) != truncated.classify(&p)) as u64
        },
        |acc, f| acc + f,
    );
    let estimate = flips as f64 / trials.max(1) as f64;
    Ok(McReport::new(estimate, wilson_ci(flips, trials), seed, trials)
        .with_bound(bound)
        .with_params(op_params))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::labelcover::{build_planted, InstanceConfig};
    use crate::params::GadgetParams;
    use crate::rng::stream_rng;

    fn vector_with_masses(masses: &[f64]) -> BlockVector {
        // One slot per block carrying the square root of the target mass.
        let mut v = BlockVector::new(Side::X, 0, 1);
        for (i, &m) in masses.iter().enumerate() {
            v.insert_block(i as u32, vec![m.sqrt()]).unwrap();
        }
        v
    }

    fn test_params(zeta: f64, k: usize, t: usize, q: usize, d: u32) -> GadgetParams {
        GadgetParams::derive(0.25, 0.1, 1, 1)
            .unwrap()
            .with_zeta(zeta)
            .unwrap()
            .with_k(k)
            .unwrap()
            .with_t(t)
            .unwrap()
            .with_q(q)
            .unwrap()
            .with_d(d)
            .unwrap()
    }

    #[test]
    fn equal_norm_blocks_are_regular_exactly_down_to_one_over_m() {
        let v = vector_with_masses(&[1.0; 5]);
        let at = critical_index(&v, 0.2, 3).unwrap();
        assert!(at.regular);
        assert_eq!(at.i_tau, 1);
        assert!(at.c_tau.is_empty() && at.c_tau_le_k.is_empty());
        let below = critical_index(&v, 0.19, 3).unwrap();
        assert!(!below.regular);
        assert_eq!(below.i_tau, 6);
        assert_eq!(below.c_tau.len(), 5);
        assert_eq!(below.c_tau_le_k.len(), 3);
    }

    #[test]
    fn worked_three_block_example() {
        let v = vector_with_masses(&[4.0, 1.0, 1.0]);
        let r = critical_index(&v, 0.5, 4).unwrap();
        assert_eq!(r.i_tau, 2);
        assert_eq!(r.c_tau, BTreeSet::from([0]));
        assert_eq!(r.c_tau_le_k, BTreeSet::from([0]));
        assert_eq!(r.ordering, vec![0, 1, 2]);
        // The residual suffix on its own is regular.
        let resid = vector_with_masses(&[0.0, 1.0, 1.0]);
        let rr = critical_index(&resid, 0.5, 4).unwrap();
        assert!(rr.regular);
    }

    #[test]
    fn empty_vector_is_regular() {
        let v = BlockVector::new(Side::Y, 3, 4);
        let r = critical_index(&v, 0.5, 2).unwrap();
        assert!(r.regular);
        assert_eq!(r.i_tau, 1);
        assert!(r.c_tau.is_empty());
        assert!(r.ordering.is_empty());
    }

    #[test]
    fn parameter_guards() {
        let v = vector_with_masses(&[1.0]);
        assert_eq!(critical_index(&v, 0.0, 1).unwrap_err(), CriticalError::BadTau(0.0));
        assert_eq!(critical_index(&v, 1.0, 1).unwrap_err(), CriticalError::BadTau(1.0));
        assert_eq!(critical_index(&v, 0.5, 0).unwrap_err(), CriticalError::BadCap);
        let mut w = BlockVector::new(Side::X, 0, 2);
        assert_eq!(
            w.insert_block(0, vec![1.0]).unwrap_err(),
            CriticalError::BlockLength { label: 0, q: 2, got: 1 }
        );
        assert_eq!(
            w.insert_block(0, vec![f64::NAN, 0.0]).unwrap_err(),
            CriticalError::NonFinite { label: 0 }
        );
    }

    #[test]
    fn norm_ties_order_by_ascending_label() {
        let mut v = BlockVector::new(Side::X, 0, 1);
        v.insert_block(7, vec![1.0]).unwrap();
        v.insert_block(2, vec![1.0]).unwrap();
        v.insert_block(5, vec![2.0]).unwrap();
        let r = critical_index(&v, 0.1, 8).unwrap();
        assert_eq!(r.ordering, vec![5, 2, 7]);
    }

    fn brute_report(v: &BlockVector, tau: f64, cap: u64) -> (usize, Vec<u32>) {
        let mut items: Vec<(u32, f64)> = v.labels().map(|l| (l, v.norm2(l))).collect();
        items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let len = items.len();
        let mut i_tau = len + 1;
        for i in 0..len {
            let tail: f64 = items[i..].iter().map(|&(_, n)| n).sum();
            if items[i].1 <= tau * tail {
                i_tau = i + 1;
                break;
            }
        }
        let mut head: Vec<u32> =
            items[..(i_tau - 1).min(cap as usize)].iter().map(|&(l, _)| l).collect();
        head.sort_unstable();
        (i_tau, head)
    }

    #[test]
    fn matches_brute_scan_and_decay_holds_on_random_vectors() {
        let mut rng = stream_rng(901, 0);
        for trial in 0..300u32 {
            let m = rng.random_range(1..=64u32);
            let q = rng.random_range(1..=8usize);
            let mut v = BlockVector::new(Side::X, 0, q);
            for label in 0..m {
                let block: Vec<f64> =
                    (0..q).map(|_| rng.random_range(-2.0..2.0f64)).collect();
                v.insert_block(label, block).unwrap();
            }
            let tau = rng.random_range(0.05..0.8);
            let cap = rng.random_range(1..=8u64);
            let r = critical_index(&v, tau, cap).unwrap();
            let (bi, bhead) = brute_report(&v, tau, cap);
            assert_eq!(r.i_tau, bi, "trial {trial}");
            let got: Vec<u32> = r.c_tau_le_k.iter().copied().collect();
            assert_eq!(got, bhead, "trial {trial}");
            assert_eq!(r.c_tau.len(), r.i_tau - 1);
            assert!(r.c_tau_le_k.is_subset(&r.c_tau));

            // Theorem-backed invariants: geometric decay of the prefix and
            // regularity of the residual.
            assert!(check_crit_decay(&v, tau).unwrap().ok, "trial {trial}");
            let mut resid = BlockVector::new(Side::X, 0, q);
            for &l in r.residual_labels() {
                resid.insert_block(l, v.block(l).unwrap().to_vec()).unwrap();
            }
            assert!(critical_index(&resid, tau, cap).unwrap().regular, "trial {trial}");
        }
    }

    #[test]
    fn injected_report_fails_decay_with_witness() {
        // Honest report: masses (4, 1), tau = 0.9 makes the vector regular.
        let v = vector_with_masses(&[4.0, 1.0]);
        assert!(check_crit_decay(&v, 0.9).unwrap().ok);
        // Tampered index claims both positions are pre-critical; position 2
        // then violates the decay law: 1 > (1/0.9) * 0.1 * 4.
        let forged = CriticalIndexReport {
            ordering: vec![0, 1],
            norms2: vec![4.0, 1.0],
            i_tau: 2,
            c_tau: BTreeSet::from([0]),
            c_tau_le_k: BTreeSet::from([0]),
            regular: false,
        };
        let check = check_crit_decay_with(&v, 0.9, &forged);
        assert!(!check.ok);
        assert_eq!(check.violation, Some((1, 2)));
    }

    fn coord(side: Side, v: u32, label: u32, slot: u32) -> Coord {
        Coord::new(side, v, label, slot)
    }

    #[test]
    fn truncation_is_identity_without_a_critical_tail() {
        let (inst, _) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            5,
        )
        .unwrap();
        let e = &inst.edges[0];
        let u = e.ex[0];
        let h = Halfspace::new(
            [(coord(Side::X, u, 0, 0), 3.0), (coord(Side::X, u, 1, 0), 0.5)],
            -1.0,
        );
        // tau = 0.5: both blocks stay critical but the cap of 2 covers
        // them, so nothing is zeroed.
        let t = truncate(&h, e, 0.5, 2).unwrap();
        assert_eq!(t, h);
    }

    #[test]
    fn truncation_zeroes_exactly_the_tail_beyond_the_cap() {
        let (inst, _) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            5,
        )
        .unwrap();
        let e = &inst.edges[0];
        let u = e.ex[0];
        let w = e.ey[0];
        // Geometric masses 256, 64, 16, 4 with tau = 0.2 keep every prefix
        // critical: |C_tau| = 4. Cap 2 must zero exactly the two smallest.
        let mut coeffs = vec![];
        for (label, mass) in [(0u32, 256.0f64), (1, 64.0), (2, 16.0), (3, 4.0)] {
            coeffs.push((coord(Side::X, u, label, 0), mass.sqrt()));
        }
        // A coefficient on the other side of the same vertex and one on a
        // Y-side vertex survive untouched.
        coeffs.push((coord(Side::Y, u, 0, 0), 9.0));
        coeffs.push((coord(Side::Y, w, 5, 0), 2.0));
        let h = Halfspace::new(coeffs, 0.0);

        let t = truncate(&h, e, 0.2, 2).unwrap();
        assert!(t.coeffs.contains_key(&coord(Side::X, u, 0, 0)));
        assert!(t.coeffs.contains_key(&coord(Side::X, u, 1, 0)));
        assert!(!t.coeffs.contains_key(&coord(Side::X, u, 2, 0)));
        assert!(!t.coeffs.contains_key(&coord(Side::X, u, 3, 0)));
        assert!(t.coeffs.contains_key(&coord(Side::Y, u, 0, 0)));
        assert!(t.coeffs.contains_key(&coord(Side::Y, w, 5, 0)));

        // Post-truncation the critical set equals its cap on that vertex.
        let bv = BlockVector::from_halfspace(&t, Side::X, u, 1).unwrap();
        let r = critical_index(&bv, 0.2, 2).unwrap();
        assert_eq!(r.c_tau, r.c_tau_le_k);
        assert_eq!(r.c_tau, BTreeSet::from([0, 1]));

        // Idempotence and exact squared-mass accounting.
        let tt = truncate(&t, e, 0.2, 2).unwrap();
        assert_eq!(tt, t);
        let mass = |h: &Halfspace| csum(h.coeffs.values().map(|c| c * c));
        let zeroed = 16.0 + 4.0;
        let total = mass(&h);
        assert!((total - (mass(&t) + zeroed)).abs() <= 1e-12 * total);
    }

    #[test]
    fn influential_sets_cover_caps_and_heavy_residuals() {
        let q = 1;
        // Empty coefficients produce empty sets.
        let empty = SidePair::empty(0, q);
        let (per, l_v) = compute_iv_lv(std::slice::from_ref(&empty), 0.3, 2, 2).unwrap();
        assert!(per[0].is_empty() && l_v.is_empty());

        // Uniform residual over more blocks than d^8 = 1: no block exceeds
        // the 1/d^8 fraction, so only the capped critical set contributes.
        let uniform = SidePair {
            x: vector_with_masses(&[1.0, 1.0, 1.0, 1.0]),
            y: BlockVector::new(Side::Y, 0, 1),
        };
        let (per, _) = compute_iv_lv(std::slice::from_ref(&uniform), 0.3, 2, 1).unwrap();
        assert!(per[0].is_empty());

        // Concentrated residual: a regular vector whose block 0 holds 60%
        // of the mass exceeds the 1/256 fraction at d = 2.
        let spread = SidePair {
            x: vector_with_masses(&[0.6, 0.1, 0.1, 0.1, 0.1]),
            y: vector_with_masses(&[100.0, 0.0]),
        };
        let (per, l_v) = compute_iv_lv(std::slice::from_ref(&spread), 0.7, 2, 2).unwrap();
        // Block 0 of y is critical (100 > 0.7 * 100.x fails only at i=1?
        // 100 <= 0.7 * 100 is false, second block 0 <= 0 holds), so y tops
        // contribute {0}; x is regular and every x block is heavy.
        assert!(per[0].contains(&0));
        assert_eq!(per[0].len(), 5);
        assert_eq!(l_v, per[0]);

        let ell_sets = [spread.clone(), uniform.clone()];
        let (both, l_v2) = compute_iv_lv(&ell_sets, 0.7, 2, 2).unwrap();
        assert_eq!(l_v2.len(), both[0].union(&both[1]).count());
        assert!(l_v2.len() as f64 <= 2.0 * 2.0 * (2.0 + 256.0));
    }

    #[test]
    fn bijective_projections_are_always_nice() {
        let (inst, _) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 4,
                small_labels: 4,
                d: 1,
            },
            11,
        )
        .unwrap();
        let e = &inst.edges[0];
        let sets: BTreeMap<u32, BTreeSet<u32>> = e
            .vids
            .iter()
            .map(|&v| (v, BTreeSet::from([0, 1, 2, 3])))
            .collect();
        let r = niceness_check(&inst, 0, &sets).unwrap();
        assert!(r.nice);
        assert_eq!(r.witness, None);
    }

    #[test]
    fn preimage_collisions_are_witnessed() {
        let (inst, _) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            11,
        )
        .unwrap();
        let e = &inst.edges[0];
        let v = e.vids[0];
        // Find two big labels in one preimage cell; d = 2 with M = 2m
        // forces every cell to hold exactly two.
        let cell = e.preimage(v, 0);
        assert_eq!(cell.len(), 2);
        let sets = BTreeMap::from([(v, BTreeSet::from([cell[0], cell[1]]))]);
        let r = niceness_check(&inst, 0, &sets).unwrap();
        assert!(!r.nice);
        assert_eq!(r.witness, Some((v, cell[0], cell[1])));

        // Empty sets everywhere are trivially nice.
        let empty: BTreeMap<u32, BTreeSet<u32>> =
            e.vids.iter().map(|&v| (v, BTreeSet::new())).collect();
        assert!(niceness_check(&inst, 0, &empty).unwrap().nice);

        let foreign = BTreeMap::from([(10_000u32, BTreeSet::from([0u32]))]);
        assert_eq!(
            niceness_check(&inst, 0, &foreign).unwrap_err(),
            CriticalError::VertexNotOnEdge(10_000)
        );
    }

    fn dictator_pair(v: u32, label: u32, q: usize) -> SidePair {
        let mut x = BlockVector::new(Side::X, v, q);
        x.insert_block(label, vec![1.0; q]).unwrap();
        let mut y = BlockVector::new(Side::Y, v, q);
        y.insert_block(label, vec![1.0; q]).unwrap();
        SidePair { x, y }
    }

    #[test]
    fn planted_dictators_fire_condition_one() {
        let (inst, labeling) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            17,
        )
        .unwrap();
        let e = &inst.edges[0];
        let (u, v) = (e.ex[0], e.ey[0]);
        let mut set: CoeffSet = BTreeMap::new();
        set.insert(u, dictator_pair(u, labeling.0[&u], 2));
        set.insert(v, dictator_pair(v, labeling.0[&v], 2));
        let r = structural_conditions(&inst, 0, &[set], 0.3, 2).unwrap();
        let j = e.project(u, labeling.0[&u]);
        assert_eq!(e.project(v, labeling.0[&v]), j, "planted labels share a block");
        assert!(r.condition_i.contains(&ConditionWitness { u, v, r: 0, p: 0, j }));
    }

    #[test]
    fn zero_coefficients_fire_nothing() {
        let (inst, _) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            17,
        )
        .unwrap();
        let r = structural_conditions(&inst, 0, &[CoeffSet::new()], 0.3, 2).unwrap();
        assert!(!r.any());
        assert_eq!(
            structural_conditions(&inst, 9, &[CoeffSet::new()], 0.3, 2).unwrap_err(),
            CriticalError::EdgeOutOfRange(9)
        );
    }

    #[test]
    fn concentrated_residual_fires_condition_two() {
        let (inst, labeling) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            17,
        )
        .unwrap();
        let e = &inst.edges[0];
        let (u, v) = (e.ex[0], e.ex[1]);
        let j = e.project(u, labeling.0[&u]);
        let mut set: CoeffSet = BTreeMap::new();
        set.insert(u, dictator_pair(u, labeling.0[&u], 2));
        // v gets an equal-mass X vector: regular at tau = 0.3, with the
        // preimage of j carrying a 1/4 > tau^4 share of the residual.
        let mut x = BlockVector::new(Side::X, v, 2);
        for label in 0..8 {
            x.insert_block(label, vec![1.0, 0.0]).unwrap();
        }
        set.insert(v, SidePair { x, y: BlockVector::new(Side::Y, v, 2) });
        let r = structural_conditions(&inst, 0, &[set], 0.3, 2).unwrap();
        assert!(r
            .condition_ii
            .contains(&ConditionWitness { u, v, r: 0, p: 0, j }));
    }

    #[test]
    fn witnesses_are_stable_under_halfspace_relabeling() {
        let (inst, labeling) = build_planted(
            InstanceConfig {
                vertices: 12,
                edges: 3,
                k: 2,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            23,
        )
        .unwrap();
        let e = &inst.edges[0];
        let (u, v) = (e.ex[0], e.ey[1]);
        let mut set_a: CoeffSet = BTreeMap::new();
        set_a.insert(u, dictator_pair(u, labeling.0[&u], 2));
        let mut set_b: CoeffSet = BTreeMap::new();
        set_b.insert(v, dictator_pair(v, labeling.0[&v], 2));

        let fwd = structural_conditions(&inst, 0, &[set_a.clone(), set_b.clone()], 0.3, 2)
            .unwrap();
        let rev = structural_conditions(&inst, 0, &[set_b, set_a], 0.3, 2).unwrap();
        let remap = |ws: &[ConditionWitness]| -> BTreeSet<ConditionWitness> {
            ws.iter()
                .map(|w| ConditionWitness { r: 1 - w.r, p: 1 - w.p, ..*w })
                .collect()
        };
        assert_eq!(
            remap(&fwd.condition_i),
            rev.condition_i.iter().copied().collect::<BTreeSet<_>>()
        );
        assert_eq!(
            remap(&fwd.condition_ii),
            rev.condition_ii.iter().copied().collect::<BTreeSet<_>>()
        );
        assert!(!fwd.condition_i.is_empty());
    }

    fn disagreement_fixture() -> (crate::labelcover::LabelCoverInstance, GadgetParams) {
        let (inst, _) = build_planted(
            InstanceConfig {
                vertices: 24,
                edges: 6,
                k: 8,
                big_labels: 8,
                small_labels: 4,
                d: 2,
            },
            13,
        )
        .unwrap();
        (inst, test_params(0.5, 8, 5, 8, 2))
    }

    #[test]
    fn untruncatable_halfspaces_report_exact_zero() {
        let (inst, params) = disagreement_fixture();
        let sampler = GlobalSampler::new(&inst, &params).unwrap();
        let e = &inst.edges[0];
        let u = e.ex[0];
        // Single huge block: C_tau is a singleton, within any cap.
        let h = Halfspace::new([(coord(Side::X, u, 0, 0), 5.0)], -1.0);
        let r = truncation_disagreement_mc(&sampler, 0, &h, 0.3, 2, 500, 7).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.ci95, [0.0, 0.0]);
        assert!(!r.bound_vacuous);
        assert!(r.bound.unwrap() > 0.0);
    }

    #[test]
    fn truncation_flips_are_rare_and_shrink_with_the_cap() {
        let (inst, params) = disagreement_fixture();
        let sampler = GlobalSampler::new(&inst, &params).unwrap();
        let e = &inst.edges[0];
        let u = e.ex[0];
        // One label per preimage cell keeps every capped prefix nice, and
        // geometric masses keep the whole prefix critical at small tau.
        let coeffs: Vec<(Coord, f64)> = (0..4u32)
            .map(|j| {
                let label = e.preimage(u, j)[0];
                (coord(Side::X, u, label, 0), 0.5f64.powi(j as i32))
            })
            .collect();
        let h = Halfspace::new(coeffs, -0.6);
        let tight = truncation_disagreement_mc(&sampler, 0, &h, 0.01, 1, 2000, 7).unwrap();
        let loose = truncation_disagreement_mc(&sampler, 0, &h, 0.01, 2, 2000, 7).unwrap();
        assert!(loose.estimate <= tight.estimate + (tight.ci95[1] - tight.ci95[0]));
        // A cap covering the whole critical set is the identity again.
        let full = truncation_disagreement_mc(&sampler, 0, &h, 0.01, 4, 2000, 7).unwrap();
        assert_eq!(full.estimate, 0.0);
        // Identical invocation reproduces the exact counts.
        let again = truncation_disagreement_mc(&sampler, 0, &h, 0.01, 1, 2000, 7).unwrap();
        assert_eq!(again, tight);
    }

    #[test]
    fn colliding_influential_labels_refuse_the_disagreement_run() {
        let (inst, params) = disagreement_fixture();
        let sampler = GlobalSampler::new(&inst, &params).unwrap();
        let e = &inst.edges[0];
        let u = e.ex[0];
        let cell = e.preimage(u, 0);
        assert_eq!(cell.len(), 2);
        // Two dominant blocks in one preimage cell collide under the edge
        // projection once both enter the influential set.
        let h = Halfspace::new(
            [
                (coord(Side::X, u, cell[0], 0), 4.0),
                (coord(Side::X, u, cell[1], 0), 3.0),
            ],
            0.0,
        );
        let err = truncation_disagreement_mc(&sampler, 0, &h, 0.3, 4, 100, 7).unwrap_err();
        assert_eq!(err, CriticalError::NotNice { vertex: u, a: cell[0], b: cell[1] });
    }

    #[test]
    fn block_vector_json_roundtrips_and_validates() {
        let mut v = BlockVector::new(Side::Y, 4, 3);
        v.insert_block(2, vec![0.5, -1.0, 0.0]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<BlockVector>(&s).unwrap(), v);
        let bad = r#"{"side":"Y","vertex":4,"q":3,"blocks":[[2,[0.5]]]}"#;
        assert!(serde_json::from_str::<BlockVector>(bad).is_err());
    }
}

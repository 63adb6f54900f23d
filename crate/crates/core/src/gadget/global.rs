//! The full point distribution over a label cover instance. Each draw picks
//! a hyperedge, a label `a`, and then works block by block through the small
//! label set: subsets `S` / `S'` of the two halves pick the signal-eligible
//! vertices, a biased bit `b` picks which side gets its off-subset preimage
//! cells noised, 1-points plant indicator cells on one host vertex per side,
//! and 0-points plant them on a thinned subset behind a low-probability gate.
//!
//! The gate probability is `1 / (zeta (1 - zeta) t)`. Parameter sets where
//! that exceeds 1 do not define a distribution; construction fails unless the
//! parameters opted into clamping, which trades the 0-point indicator rate
//! for well-definedness without touching the label-determining structure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::classify::{completeness_cnf, Classifier};
use crate::labelcover::{LabelCoverInstance, Labeling};
use crate::params::GadgetParams;
use crate::point::{GlobalBlockDraw, SamplePoint, Side, Transcript};
use crate::rng::{mc_fold, stream_rng};

use super::{draw, GadgetError, PointSampler};

#[derive(Debug, Clone)]
pub struct GlobalSampler<'a> {
    instance: &'a LabelCoverInstance,
    params: &'a GadgetParams,
    gate: f64,
    /// `preimages[edge][vertex position in vids][small label] -> big labels`.
    preimages: Vec<Vec<Vec<Vec<u32>>>>,
}

impl<'a> GlobalSampler<'a> {
    pub fn new(
        instance: &'a LabelCoverInstance,
        params: &'a GadgetParams,
    ) -> Result<Self, GadgetError> {
        if instance.k != params.k {
            return Err(GadgetError::KMismatch { instance: instance.k, params: params.k });
        }
        if params.t > params.k {
            return Err(GadgetError::TooLargeSubset { t: params.t, k: params.k });
        }
        let raw = params.zero_gate();
        let gate = if raw <= 1.0 {
            raw
        } else if params.clamp_zero_gate {
            1.0
        } else {
            return Err(GadgetError::InvalidZeroGate { gate: raw });
        };
        let preimages = instance
            .edges
            .iter()
            .map(|e| {
                e.vids
                    .iter()
                    .map(|&v| {
                        (0..instance.small_labels).map(|j| e.preimage(v, j)).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { instance, params, gate, preimages })
    }

    pub fn instance(&self) -> &LabelCoverInstance {
        self.instance
    }

    pub fn params(&self) -> &GadgetParams {
        self.params
    }

    /// Effective 0-point gate probability after any clamping.
    pub fn gate(&self) -> f64 {
        self.gate
    }

    pub(crate) fn preimage_of(&self, edge: usize, pos: usize, j: u32) -> &[u32] {
        &self.preimages[edge][pos][j as usize]
    }

    pub fn sample(&self, seed: u64, index: u64) -> SamplePoint {
        let mut rng = stream_rng(seed, index);
        let edge = rng.random_range(0..self.instance.edges.len());
        let label = rng.random_bool(0.5);
        self.sample_body(&mut rng, edge, label)
    }

    /// Draw conditioned on a fixed edge and label.
    pub fn sample_on_edge(
        &self,
        edge: usize,
        label: bool,
        seed: u64,
        index: u64,
    ) -> Result<SamplePoint, GadgetError> {
        if edge >= self.instance.edges.len() {
            return Err(GadgetError::EdgeOutOfRange(edge));
        }
        let mut rng = stream_rng(seed, index);
        Ok(self.sample_body(&mut rng, edge, label))
    }

    /// Draw on a fixed edge with a fair label coin from the same stream.
    pub fn sample_on_edge_mixed(
        &self,
        edge: usize,
        seed: u64,
        index: u64,
    ) -> Result<SamplePoint, GadgetError> {
        if edge >= self.instance.edges.len() {
            return Err(GadgetError::EdgeOutOfRange(edge));
        }
        let mut rng = stream_rng(seed, index);
        let label = rng.random_bool(0.5);
        Ok(self.sample_body(&mut rng, edge, label))
    }

    fn sample_body(&self, rng: &mut ChaCha8Rng, edge: usize, label: bool) -> SamplePoint {
        let e = &self.instance.edges[edge];
        let (k, t, q, zeta) = (self.params.k, self.params.t, self.params.q, self.params.zeta);
        let mut point = SamplePoint::new(label);
        point.edge = Some(edge as u32);
        let mut blocks = Vec::with_capacity(self.instance.small_labels as usize);
        for j in 0..self.instance.small_labels {
            let s_x = draw::subset(&e.ex, t, rng);
            let s_y = draw::subset(&e.ey, t, rng);
            let x_noised = rng.random_bool(zeta);
            let (noisy_side, eligible, offset) = if x_noised {
                (Side::X, &s_x, 0)
            } else {
                (Side::Y, &s_y, k)
            };
            for pos in 0..k {
                let v = e.vids[offset + pos];
                if eligible.binary_search(&v).is_err() {
                    for &i in self.preimage_of(edge, offset + pos, j) {
                        draw::push_noise_block(&mut point, noisy_side, v, i, q, rng);
                    }
                }
            }
            let mut host_x = None;
            let mut host_y = None;
            let mut gate_fired = None;
            let mut thinned = Vec::new();
            if label {
                let hx = s_x[rng.random_range(0..t)];
                let hy = s_y[rng.random_range(0..t)];
                let hx_pos = e.ex.iter().position(|&v| v == hx).unwrap();
                let hy_pos = e.ey.iter().position(|&v| v == hy).unwrap();
                for &i in self.preimage_of(edge, hx_pos, j) {
                    draw::push_indicator_block(&mut point, Side::X, hx, i, q, rng);
                }
                for &i in self.preimage_of(edge, k + hy_pos, j) {
                    draw::push_indicator_block(&mut point, Side::Y, hy, i, q, rng);
                }
                host_x = Some(hx);
                host_y = Some(hy);
            } else {
                let fire = rng.random_bool(self.gate);
                if fire {
                    let keep_p = if x_noised { 1.0 - zeta } else { zeta };
                    let active = if x_noised { &s_x } else { &s_y };
                    for &v in active {
                        if rng.random_bool(keep_p) {
                            let pos = e.vids.iter().position(|&w| w == v).unwrap();
                            for &i in self.preimage_of(edge, pos, j) {
                                draw::push_indicator_block(&mut point, noisy_side, v, i, q, rng);
                            }
                            thinned.push(v);
                        }
                    }
                }
                gate_fired = Some(fire);
            }
            blocks.push(GlobalBlockDraw {
                b: !x_noised,
                s_x,
                s_y,
                host_x,
                host_y,
                gate_fired,
                thinned,
            });
        }
        point.transcript = Some(Transcript::Global { blocks });
        point.finalize();
        point
    }
}

impl PointSampler for GlobalSampler<'_> {
    fn sample_point(&self, seed: u64, index: u64) -> SamplePoint {
        self.sample(seed, index)
    }
}

/// View of the full distribution conditioned on one hyperedge, with the
/// label still drawn fairly. Lets the generic audits run per edge.
#[derive(Clone, Copy, Debug)]
pub struct EdgeSampler<'a> {
    global: &'a GlobalSampler<'a>,
    edge: usize,
}

impl<'a> EdgeSampler<'a> {
    pub fn new(global: &'a GlobalSampler<'a>, edge: usize) -> Result<Self, GadgetError> {
        if edge >= global.instance.edges.len() {
            return Err(GadgetError::EdgeOutOfRange(edge));
        }
        Ok(Self { global, edge })
    }

    pub fn edge(&self) -> usize {
        self.edge
    }
}

impl PointSampler for EdgeSampler<'_> {
    fn sample_point(&self, seed: u64, index: u64) -> SamplePoint {
        self.global
            .sample_on_edge_mixed(self.edge, seed, index)
            .expect("edge index checked at construction")
    }
}

/// Outcome of driving the two one-clause label-recovery formulas over a
/// sampled stream and comparing their conjunction with the point labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompletenessReport {
    pub trials: u64,
    pub ones: u64,
    pub zeros: u64,
    /// Points where the conjunction disagreed with the label.
    pub and_errors: u64,
    /// 1-points missed by the X-side clause alone.
    pub c1_misses: u64,
    /// 1-points missed by the Y-side clause alone.
    pub c2_misses: u64,
}

impl CompletenessReport {
    pub fn exact(&self) -> bool {
        self.and_errors == 0 && self.c1_misses == 0 && self.c2_misses == 0
    }
}

/// Samples `trials` points and checks that the conjunction of the per-side
/// clauses built from `labeling` reproduces every label.
pub fn verify_completeness(
    sampler: &GlobalSampler,
    labeling: &Labeling,
    trials: u64,
    seed: u64,
) -> CompletenessReport {
    let cls = completeness_cnf(labeling, sampler.params().q);
    mc_fold(
        trials,
        CompletenessReport {
            trials,
            ones: 0,
            zeros: 0,
            and_errors: 0,
            c1_misses: 0,
            c2_misses: 0,
        },
        |index| {
            let p = sampler.sample(seed, index);
            let c1 = cls.c1.classify(&p);
            let c2 = cls.c2.classify(&p);
            (p.label, c1, c2)
        },
        |mut acc, (label, c1, c2)| {
            if label {
                acc.ones += 1;
                acc.c1_misses += !c1 as u64;
                acc.c2_misses += !c2 as u64;
            } else {
                acc.zeros += 1;
            }
            acc.and_errors += ((c1 && c2) != label) as u64;
            acc
        },
    )
}

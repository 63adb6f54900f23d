//! Coupled draws: one 0-point and one 1-point over the same hyperedge that
//! agree exactly on a shared region. The shared region consists of the
//! eligibility subsets, the per-block noise-side bits, all off-subset noise
//! cells, and the cells of a designated set of "top" labels; each output is
//! then completed by sampling its label-specific structure from the correct
//! conditional law given the shared region.
//!
//! Top labels must project injectively per vertex and land in pairwise
//! distinct blocks across vertices, so every block carries at most one top
//! cell. The shared top cell is drawn from the 0-point's joint law; the
//! 0-point output therefore follows its unconditioned distribution exactly,
//! while the 1-point output reproduces every single-coordinate law exactly
//! but correlates its indicator hosting with the noise-side bit at top
//! blocks. Sampling requires the 0-point indicator gate to be a genuine
//! probability (no clamping), which also forces the subset size past the
//! minimum the exclusion draws need.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::point::{Coord, GlobalBlockDraw, SamplePoint, Side, Transcript};
use crate::rng::stream_rng;

use super::{draw, GadgetError, GlobalSampler};

#[derive(Clone, Copy, Debug)]
struct TopBlock {
    vertex: u32,
    on_x: bool,
    label: u32,
}

#[derive(Clone, Debug)]
pub struct PairedSampler<'a> {
    global: &'a GlobalSampler<'a>,
    edge: usize,
    top_blocks: BTreeMap<u32, TopBlock>,
}

/// The shared region of one coupled draw, for auditing and tests.
#[derive(Clone, Debug)]
pub struct SharedFixing {
    pub s_x: Vec<Vec<u32>>,
    pub s_y: Vec<Vec<u32>>,
    /// Per block: the noise landed on the X side.
    pub x_noised: Vec<bool>,
    /// Per top block: the top cell carries an indicator.
    pub hosted: BTreeMap<u32, bool>,
    /// Bits set by the shared stages, sorted.
    pub shared_bits: Vec<Coord>,
}

#[derive(Clone, Debug)]
pub struct PairedDraw {
    pub zero: SamplePoint,
    pub one: SamplePoint,
    pub shared: SharedFixing,
}

impl<'a> PairedSampler<'a> {
    /// `top` maps vertices on the edge to their top big labels.
    pub fn new(
        global: &'a GlobalSampler<'a>,
        edge: usize,
        top: &BTreeMap<u32, Vec<u32>>,
    ) -> Result<Self, GadgetError> {
        let inst = global.instance();
        if edge >= inst.edges.len() {
            return Err(GadgetError::EdgeOutOfRange(edge));
        }
        if !global.params().zero_gate_valid() {
            return Err(GadgetError::PairedNeedsValidGate { gate: global.params().zero_gate() });
        }
        let e = &inst.edges[edge];
        let mut top_blocks: BTreeMap<u32, TopBlock> = BTreeMap::new();
        for (&vertex, labels) in top {
            if !e.contains(vertex) {
                return Err(GadgetError::VertexNotOnEdge(vertex));
            }
            let on_x = e.ex.contains(&vertex);
            let mut sorted = labels.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for &label in &sorted {
                if label >= inst.big_labels {
                    return Err(GadgetError::TopLabelOutOfRange { vertex, label });
                }
                let block = e.project(vertex, label);
                if let Some(prev) = top_blocks.get(&block) {
                    return Err(if prev.vertex == vertex {
                        GadgetError::TopSetProjectionClash {
                            vertex,
                            a: prev.label,
                            b: label,
                            block,
                        }
                    } else {
                        GadgetError::TopSetCrossClash { u: prev.vertex, v: vertex, block }
                    });
                }
                top_blocks.insert(block, TopBlock { vertex, on_x, label });
            }
        }
        Ok(Self { global, edge, top_blocks })
    }

    pub fn edge(&self) -> usize {
        self.edge
    }

    fn is_top(&self, block: u32, vertex: u32, label: u32) -> bool {
        self.top_blocks
            .get(&block)
            .is_some_and(|tb| tb.vertex == vertex && tb.label == label)
    }

    pub fn sample(&self, seed: u64, index: u64) -> PairedDraw {
        let mut rng = stream_rng(seed, index);
        let inst = self.global.instance();
        let p = self.global.params();
        let e = &inst.edges[self.edge];
        let (k, t, q, zeta) = (p.k, p.t, p.q, p.zeta);
        let g = self.global.gate();
        let m = inst.small_labels as usize;

        // Stage 1: eligibility subsets for every block, both sides.
        let mut s_x = Vec::with_capacity(m);
        let mut s_y = Vec::with_capacity(m);
        for _ in 0..m {
            s_x.push(draw::subset(&e.ex, t, &mut rng));
            s_y.push(draw::subset(&e.ey, t, &mut rng));
        }

        // Stage 2: noise-side bits of top blocks and their top cells, drawn
        // jointly from the 0-point law: an eligible top vertex hosts its
        // indicator with probability gate x thinning exactly when the noise
        // landed on its side; an ineligible one gets plain noise then.
        let mut x_noised = vec![false; m];
        let mut b_drawn = vec![false; m];
        let mut hosted = BTreeMap::new();
        let mut shared_scratch = SamplePoint::new(false);
        for (&j, tb) in &self.top_blocks {
            let xn = rng.random_bool(zeta);
            x_noised[j as usize] = xn;
            b_drawn[j as usize] = true;
            let side_noised = if tb.on_x { xn } else { !xn };
            let (eligible, side, host_p) = if tb.on_x {
                (&s_x[j as usize], Side::X, g * (1.0 - zeta))
            } else {
                (&s_y[j as usize], Side::Y, g * zeta)
            };
            if side_noised {
                if eligible.binary_search(&tb.vertex).is_ok() {
                    let h = rng.random_bool(host_p);
                    if h {
                        draw::push_indicator_block(
                            &mut shared_scratch,
                            side,
                            tb.vertex,
                            tb.label,
                            q,
                            &mut rng,
                        );
                    }
                    hosted.insert(j, h);
                } else {
                    draw::push_noise_block(
                        &mut shared_scratch,
                        side,
                        tb.vertex,
                        tb.label,
                        q,
                        &mut rng,
                    );
                    hosted.insert(j, false);
                }
            } else {
                hosted.insert(j, false);
            }
        }

        // Stage 3: remaining noise-side bits, then every off-subset noise
        // cell on the noised side (top cells were already handled above).
        for (j, xn) in x_noised.iter_mut().enumerate() {
            if !b_drawn[j] {
                *xn = rng.random_bool(zeta);
            }
        }
        for j in 0..m {
            let (side, eligible, offset) =
                if x_noised[j] { (Side::X, &s_x[j], 0) } else { (Side::Y, &s_y[j], k) };
            for pos in 0..k {
                let v = e.vids[offset + pos];
                if eligible.binary_search(&v).is_err() {
                    for &i in self.global.preimage_of(self.edge, offset + pos, j as u32) {
                        if self.is_top(j as u32, v, i) {
                            continue;
                        }
                        draw::push_noise_block(&mut shared_scratch, side, v, i, q, &mut rng);
                    }
                }
            }
        }
        shared_scratch.finalize();
        let shared_bits = shared_scratch.bits;

        let zero = self.complete_zero(&mut rng, &shared_bits, &s_x, &s_y, &x_noised, &hosted);
        let one = self.complete_one(&mut rng, &shared_bits, &s_x, &s_y, &x_noised, &hosted);
        PairedDraw {
            zero,
            one,
            shared: SharedFixing { s_x, s_y, x_noised, hosted, shared_bits },
        }
    }

    /// 0-point completion: reconstruct the indicator branch per block from
    /// its conditional law given the shared top cell, then fill the
    /// label-specific indicator cells.
    #[allow(clippy::too_many_arguments)]
    fn complete_zero(
        &self,
        rng: &mut ChaCha8Rng,
        shared_bits: &[Coord],
        s_x: &[Vec<u32>],
        s_y: &[Vec<u32>],
        x_noised: &[bool],
        hosted: &BTreeMap<u32, bool>,
    ) -> SamplePoint {
        let inst = self.global.instance();
        let p = self.global.params();
        let e = &inst.edges[self.edge];
        let (q, zeta) = (p.q, p.zeta);
        let g = self.global.gate();
        let m = inst.small_labels as usize;
        let mut point = SamplePoint::new(false);
        point.edge = Some(self.edge as u32);
        point.bits.extend_from_slice(shared_bits);
        let mut blocks = Vec::with_capacity(m);
        for j in 0..m {
            let xn = x_noised[j];
            let (side, active) = if xn { (Side::X, &s_x[j]) } else { (Side::Y, &s_y[j]) };
            let keep_p = if xn { 1.0 - zeta } else { zeta };
            let constraint = self
                .top_blocks
                .get(&(j as u32))
                .filter(|tb| tb.on_x == xn && active.binary_search(&tb.vertex).is_ok());
            let (fire, thinned) = match constraint {
                Some(tb) if hosted[&(j as u32)] => {
                    // Hosting implies the branch fired and kept the vertex.
                    let mut kept = Vec::new();
                    for &v in active {
                        if v == tb.vertex || rng.random_bool(keep_p) {
                            kept.push(v);
                        }
                    }
                    (true, kept)
                }
                Some(tb) => {
                    let p_fire = g * (1.0 - keep_p) / (1.0 - g * keep_p);
                    let fire = rng.random_bool(p_fire);
                    let mut kept = Vec::new();
                    if fire {
                        for &v in active {
                            if v != tb.vertex && rng.random_bool(keep_p) {
                                kept.push(v);
                            }
                        }
                    }
                    (fire, kept)
                }
                None => {
                    let fire = rng.random_bool(g);
                    let mut kept = Vec::new();
                    if fire {
                        for &v in active {
                            if rng.random_bool(keep_p) {
                                kept.push(v);
                            }
                        }
                    }
                    (fire, kept)
                }
            };
            for &v in &thinned {
                let pos = e.vids.iter().position(|&w| w == v).unwrap();
                for &i in self.global.preimage_of(self.edge, pos, j as u32) {
                    if self.is_top(j as u32, v, i) {
                        continue; // the shared cell already holds its value
                    }
                    draw::push_indicator_block(&mut point, side, v, i, q, rng);
                }
            }
            blocks.push(GlobalBlockDraw {
                b: !xn,
                s_x: s_x[j].clone(),
                s_y: s_y[j].clone(),
                host_x: None,
                host_y: None,
                gate_fired: Some(fire),
                thinned,
            });
        }
        point.transcript = Some(Transcript::Global { blocks });
        point.finalize();
        point
    }

    /// 1-point completion: per block and side, the host is the top vertex
    /// exactly when the shared cell hosts; otherwise it is uniform over the
    /// rest of the eligible subset.
    #[allow(clippy::too_many_arguments)]
    fn complete_one(
        &self,
        rng: &mut ChaCha8Rng,
        shared_bits: &[Coord],
        s_x: &[Vec<u32>],
        s_y: &[Vec<u32>],
        x_noised: &[bool],
        hosted: &BTreeMap<u32, bool>,
    ) -> SamplePoint {
        let inst = self.global.instance();
        let p = self.global.params();
        let e = &inst.edges[self.edge];
        let (k, t, q) = (p.k, p.t, p.q);
        let m = inst.small_labels as usize;
        let mut point = SamplePoint::new(true);
        point.edge = Some(self.edge as u32);
        point.bits.extend_from_slice(shared_bits);
        let mut blocks = Vec::with_capacity(m);
        for j in 0..m {
            let pick_host = |set: &[u32], on_x: bool, rng: &mut ChaCha8Rng| -> u32 {
                let top = self
                    .top_blocks
                    .get(&(j as u32))
                    .filter(|tb| tb.on_x == on_x && set.binary_search(&tb.vertex).is_ok());
                match top {
                    Some(tb) if hosted[&(j as u32)] => tb.vertex,
                    Some(tb) => {
                        let idx = rng.random_range(0..t - 1);
                        *set.iter().filter(|&&v| v != tb.vertex).nth(idx).unwrap()
                    }
                    None => set[rng.random_range(0..t)],
                }
            };
            let hx = pick_host(&s_x[j], true, rng);
            let hy = pick_host(&s_y[j], false, rng);
            let hx_pos = e.ex.iter().position(|&v| v == hx).unwrap();
            let hy_pos = e.ey.iter().position(|&v| v == hy).unwrap();
            for &i in self.global.preimage_of(self.edge, hx_pos, j as u32) {
                if self.is_top(j as u32, hx, i) {
                    continue;
                }
                draw::push_indicator_block(&mut point, Side::X, hx, i, q, rng);
            }
            for &i in self.global.preimage_of(self.edge, k + hy_pos, j as u32) {
                if self.is_top(j as u32, hy, i) {
                    continue;
                }
                draw::push_indicator_block(&mut point, Side::Y, hy, i, q, rng);
            }
            blocks.push(GlobalBlockDraw {
                b: !x_noised[j],
                s_x: s_x[j].clone(),
                s_y: s_y[j].clone(),
                host_x: Some(hx),
                host_y: Some(hy),
                gate_fired: None,
                thinned: Vec::new(),
            });
        }
        point.transcript = Some(Transcript::Global { blocks });
        point.finalize();
        point
    }

    /// All coordinates the shared stages determine (set or unset) for a
    /// given shared fixing: the off-subset noise region plus top cells.
    pub fn shared_support(&self, shared: &SharedFixing) -> Vec<Coord> {
        let inst = self.global.instance();
        let e = &inst.edges[self.edge];
        let (k, q) = (self.global.params().k, self.global.params().q);
        let m = inst.small_labels as usize;
        let mut out = Vec::new();
        for j in 0..m {
            let (side, eligible, offset) = if shared.x_noised[j] {
                (Side::X, &shared.s_x[j], 0)
            } else {
                (Side::Y, &shared.s_y[j], k)
            };
            for pos in 0..k {
                let v = e.vids[offset + pos];
                if eligible.binary_search(&v).is_err() {
                    for &i in self.global.preimage_of(self.edge, offset + pos, j as u32) {
                        for slot in 0..q {
                            out.push(Coord::new(side, v, i, slot as u32));
                        }
                    }
                }
            }
        }
        for tb in self.top_blocks.values() {
            let side = if tb.on_x { Side::X } else { Side::Y };
            for slot in 0..q {
                out.push(Coord::new(side, tb.vertex, tb.label, slot as u32));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

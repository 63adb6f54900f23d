//! Point-label distributions: the two single-edge toy families, the full
//! edge-sampling distribution over a label cover instance, and the paired
//! (coupled) variant that shares noise between a 0-point and a 1-point.

mod basic;
mod global;
mod marginal;
mod paired;
mod simplified;

pub use basic::BasicSampler;
pub use global::{verify_completeness, CompletenessReport, EdgeSampler, GlobalSampler};
pub use marginal::{marginal_report, CoordMarginal, MarginalReport};
pub use paired::{PairedDraw, PairedSampler, SharedFixing};
pub use simplified::SimplifiedSampler;

use thiserror::Error;

use crate::point::SamplePoint;

#[derive(Debug, Error, PartialEq)]
pub enum GadgetError {
    #[error("need at least one label, one row, and one slot")]
    DegenerateShape,
    #[error("row count must be even to split rows in half")]
    OddRows,
    #[error("instance has k={instance} but params expect k={params}")]
    KMismatch { instance: usize, params: usize },
    #[error("subset size t={t} exceeds half-edge size k={k}")]
    TooLargeSubset { t: usize, k: usize },
    #[error("0-point indicator gate {gate:.4} exceeds 1; derive valid params or opt into clamping")]
    InvalidZeroGate { gate: f64 },
    #[error("paired sampling needs a genuine gate probability, got {gate:.4}")]
    PairedNeedsValidGate { gate: f64 },
    #[error("edge index {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("vertex {0} is not on the requested edge")]
    VertexNotOnEdge(u32),
    #[error("top label {label} out of range at vertex {vertex}")]
    TopLabelOutOfRange { vertex: u32, label: u32 },
    #[error("top labels {a} and {b} at vertex {vertex} share projected block {block}")]
    TopSetProjectionClash { vertex: u32, a: u32, b: u32, block: u32 },
    #[error("top labels at vertices {u} and {v} share projected block {block}")]
    TopSetCrossClash { u: u32, v: u32, block: u32 },
}

/// Anything that can draw the point at a `(seed, index)` stream key.
/// Implementations must be pure in the key so parallel driving is safe.
pub trait PointSampler: Sync {
    fn sample_point(&self, seed: u64, index: u64) -> SamplePoint;
}

pub(crate) mod draw {
    //! Shared low-level draws. All samplers funnel through these so the
    //! bit-push order (and therefore the finalized point) is deterministic.

    use rand::{Rng, RngCore};

    use crate::point::{Coord, SamplePoint, Side};

    /// Sets each of the `q` slots of `(side, vertex, label)` with prob 1/2.
    pub fn push_noise_block(
        point: &mut SamplePoint,
        side: Side,
        vertex: u32,
        label: u32,
        q: usize,
        rng: &mut impl RngCore,
    ) {
        let mut slot = 0usize;
        while slot < q {
            let width = (q - slot).min(64);
            let mask = if width == 64 {
                rng.next_u64()
            } else {
                rng.next_u64() & ((1u64 << width) - 1)
            };
            let mut bits = mask;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                point.bits.push(Coord::new(side, vertex, label, (slot + b) as u32));
                bits &= bits - 1;
            }
            slot += width;
        }
    }

    /// Sets exactly one uniformly chosen slot of `(side, vertex, label)`.
    pub fn push_indicator_block(
        point: &mut SamplePoint,
        side: Side,
        vertex: u32,
        label: u32,
        q: usize,
        rng: &mut impl Rng,
    ) {
        let slot = rng.random_range(0..q) as u32;
        point.bits.push(Coord::new(side, vertex, label, slot));
    }

    /// Uniform subset of `t` elements from `pool`, returned sorted.
    pub fn subset(pool: &[u32], t: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut picked: Vec<u32> = rand::seq::index::sample(rng, pool.len(), t)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        picked
    }
}

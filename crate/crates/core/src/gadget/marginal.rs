//! Per-coordinate marginal comparison between the two label classes of any
//! point sampler. Estimates `P[coord = 1]` separately on 0-points and
//! 1-points from one shared stream and reports a two-proportion z-score per
//! coordinate.

use serde::{Deserialize, Serialize};

use crate::point::Coord;
use crate::rng::mc_fold;

use super::PointSampler;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoordMarginal {
    pub coord: Coord,
    pub mean0: f64,
    pub mean1: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalReport {
    pub coords: Vec<CoordMarginal>,
    pub zeros: u64,
    pub ones: u64,
    pub max_abs_z: f64,
}

impl MarginalReport {
    /// Largest |z| stays under `bound` for every probed coordinate.
    pub fn within(&self, bound: f64) -> bool {
        self.max_abs_z <= bound
    }
}

/// Two-proportion z-score with a pooled-variance denominator. Coordinates
/// that never fire in either class score 0.
fn z_score(hits0: u64, n0: u64, hits1: u64, n1: u64) -> f64 {
    let (p0, p1) = (hits0 as f64 / n0 as f64, hits1 as f64 / n1 as f64);
    let pooled = (hits0 + hits1) as f64 / (n0 + n1) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n0 as f64 + 1.0 / n1 as f64);
    if var == 0.0 {
        return 0.0;
    }
    (p1 - p0) / var.sqrt()
}

/// Draws `trials` points and compares the empirical rate of each probed
/// coordinate between the two label classes.
pub fn marginal_report(
    sampler: &dyn PointSampler,
    coords: &[Coord],
    trials: u64,
    seed: u64,
) -> MarginalReport {
    let width = coords.len();
    let (zeros, ones, hits0, hits1) = mc_fold(
        trials,
        (0u64, 0u64, vec![0u64; width], vec![0u64; width]),
        |index| {
            let p = sampler.sample_point(seed, index);
            let hits: Vec<bool> = coords.iter().map(|c| p.is_set(c)).collect();
            (p.label, hits)
        },
        |(mut zeros, mut ones, mut hits0, mut hits1), (label, hits)| {
            let tally = if label { &mut hits1 } else { &mut hits0 };
            if label {
                ones += 1;
            } else {
                zeros += 1;
            }
            for (slot, hit) in tally.iter_mut().zip(hits) {
                *slot += hit as u64;
            }
            (zeros, ones, hits0, hits1)
        },
    );
    let coords: Vec<CoordMarginal> = coords
        .iter()
        .enumerate()
        .map(|(i, &coord)| CoordMarginal {
            coord,
            mean0: hits0[i] as f64 / zeros as f64,
            mean1: hits1[i] as f64 / ones as f64,
            z: z_score(hits0[i], zeros, hits1[i], ones),
        })
        .collect();
    let max_abs_z = coords.iter().map(|c| c.z.abs()).fold(0.0f64, f64::max);
    MarginalReport { coords, zeros, ones, max_abs_z }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadget::BasicSampler;
    use crate::point::Side;

    #[test]
    fn detects_the_obvious_gap_and_passes_the_matched_coordinate() {
        // In the smallest family, X coordinates fire with rate 1 on 1-points
        // and 1/2 on 0-points (huge z), while a Y coordinate fires with rate
        // 1/k vs 1/(2k) (still detectable). Nothing matches exactly, so use
        // a label-blind coordinate: none exists here, and the z for X must
        // dwarf the z for Y.
        let s = BasicSampler::new(2, 8).unwrap();
        let probes = [Coord::new(Side::X, 0, 0, 0), Coord::new(Side::Y, 3, 0, 0)];
        let rep = marginal_report(&s, &probes, 40_000, 5);
        assert_eq!(rep.zeros + rep.ones, 40_000);
        let zx = rep.coords[0].z.abs();
        let zy = rep.coords[1].z.abs();
        assert!(zx > 50.0, "X side gap is enormous, got {zx}");
        assert!(zy > 4.0, "Y side gap is real, got {zy}");
        assert!(zx > zy);
        assert_eq!(rep.max_abs_z, zx.max(zy));
        assert!(!rep.within(5.0));
    }

    #[test]
    fn never_firing_coordinate_scores_zero() {
        let s = BasicSampler::new(2, 4).unwrap();
        let probes = [Coord::new(Side::X, 0, 1, 3)]; // slot 3 never used here
        let rep = marginal_report(&s, &probes, 2_000, 7);
        assert_eq!(rep.coords[0].z, 0.0);
        assert!(rep.within(1.0));
    }

    #[test]
    fn report_is_deterministic() {
        let s = BasicSampler::new(3, 4).unwrap();
        let probes = [Coord::new(Side::X, 0, 2, 0)];
        let a = marginal_report(&s, &probes, 10_000, 9);
        let b = marginal_report(&s, &probes, 10_000, 9);
        assert_eq!(a.coords[0].mean0, b.coords[0].mean0);
        assert_eq!(a.coords[0].z, b.coords[0].z);
    }
}

//! Smallest point family: one X row, k Y rows, one slot per label.
//!
//! A 1-point picks a row `s` and turns on every label of X and of Y_s, so
//! the two sides agree coordinate-wise on that row. A 0-point splits each
//! label independently: a fresh row r and a fair coin decide whether the
//! label lands on X or on Y_r, never both.

use rand::Rng;

use crate::point::{Coord, SamplePoint, Side, Transcript};
use crate::rng::stream_rng;

use super::{GadgetError, PointSampler};

#[derive(Debug, Clone, Copy)]
pub struct BasicSampler {
    labels: u32,
    rows: usize,
}

impl BasicSampler {
    pub fn new(labels: u32, rows: usize) -> Result<Self, GadgetError> {
        if labels == 0 || rows == 0 {
            return Err(GadgetError::DegenerateShape);
        }
        Ok(Self { labels, rows })
    }

    pub fn labels(&self) -> u32 {
        self.labels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn sample(&self, seed: u64, index: u64) -> SamplePoint {
        let mut rng = stream_rng(seed, index);
        let label = rng.random_bool(0.5);
        let mut point = SamplePoint::new(label);
        let star_row = if label {
            let s = rng.random_range(0..self.rows) as u32;
            for i in 0..self.labels {
                point.bits.push(Coord::new(Side::X, 0, i, 0));
                point.bits.push(Coord::new(Side::Y, s, i, 0));
            }
            Some(s)
        } else {
            for i in 0..self.labels {
                let r = rng.random_range(0..self.rows) as u32;
                if rng.random_bool(0.5) {
                    point.bits.push(Coord::new(Side::X, 0, i, 0));
                } else {
                    point.bits.push(Coord::new(Side::Y, r, i, 0));
                }
            }
            None
        };
        point.rng_key = Some((seed, index));
        point.transcript = Some(Transcript::Basic { star_row });
        point.finalize();
        point
    }
}

impl PointSampler for BasicSampler {
    fn sample_point(&self, seed: u64, index: u64) -> SamplePoint {
        self.sample(seed, index)
    }
}

//! Single-edge block family: labels come in `m` contiguous blocks of width
//! `d`, both sides carry `k` rows, and every (row, label) cell holds `q`
//! slots. Per block a fair bit `b` picks which side gets half its rows
//! noised (the rows outside a uniform half-size set S). 1-points put one
//! indicator row on each side, drawn from S; 0-points put an indicator row
//! only on the noised side, and only with probability 1/k.

use rand::Rng;

use crate::point::{SamplePoint, Side, SimplifiedBlockDraw, Transcript};
use crate::rng::stream_rng;

use super::{draw, GadgetError, PointSampler};

#[derive(Debug, Clone)]
pub struct SimplifiedSampler {
    blocks: usize,
    width: usize,
    rows: usize,
    slots: usize,
    row_pool: Vec<u32>,
}

impl SimplifiedSampler {
    pub fn new(blocks: usize, width: usize, rows: usize, slots: usize) -> Result<Self, GadgetError> {
        if blocks == 0 || width == 0 || rows == 0 || slots == 0 {
            return Err(GadgetError::DegenerateShape);
        }
        if rows % 2 != 0 {
            return Err(GadgetError::OddRows);
        }
        Ok(Self {
            blocks,
            width,
            rows,
            slots,
            row_pool: (0..rows as u32).collect(),
        })
    }

    pub fn labels(&self) -> u32 {
        (self.blocks * self.width) as u32
    }

    fn block_labels(&self, j: usize) -> std::ops::Range<u32> {
        (j * self.width) as u32..((j + 1) * self.width) as u32
    }

    pub fn sample(&self, seed: u64, index: u64) -> SamplePoint {
        let mut rng = stream_rng(seed, index);
        let label = rng.random_bool(0.5);
        let mut point = SamplePoint::new(label);
        let mut blocks = Vec::with_capacity(self.blocks);
        for j in 0..self.blocks {
            let b = rng.random_bool(0.5);
            let noisy_side = if b { Side::Y } else { Side::X };
            let s = draw::subset(&self.row_pool, self.rows / 2, &mut rng);
            for &row in &self.row_pool {
                if s.binary_search(&row).is_err() {
                    for i in self.block_labels(j) {
                        draw::push_noise_block(&mut point, noisy_side, row, i, self.slots, &mut rng);
                    }
                }
            }
            let row_x = s[rng.random_range(0..s.len())];
            let row_y = s[rng.random_range(0..s.len())];
            let accepted = if label {
                for i in self.block_labels(j) {
                    draw::push_indicator_block(&mut point, Side::X, row_x, i, self.slots, &mut rng);
                }
                for i in self.block_labels(j) {
                    draw::push_indicator_block(&mut point, Side::Y, row_y, i, self.slots, &mut rng);
                }
                None
            } else {
                let fire = rng.random_bool(1.0 / self.rows as f64);
                if fire {
                    for i in self.block_labels(j) {
                        draw::push_indicator_block(&mut point, noisy_side, row_x, i, self.slots, &mut rng);
                    }
                }
                Some(fire)
            };
            blocks.push(SimplifiedBlockDraw { b, rows: s, row_x, row_y, accepted });
        }
        point.rng_key = Some((seed, index));
        point.transcript = Some(Transcript::Simplified { blocks });
        point.finalize();
        point
    }
}

impl PointSampler for SimplifiedSampler {
    fn sample_point(&self, seed: u64, index: u64) -> SamplePoint {
        self.sample(seed, index)
    }
}

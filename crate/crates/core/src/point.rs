//! Sparse sample points over the two-sided coordinate space.
//!
//! Coordinates are addressed as `(side, vertex, label, slot)`. A point stores
//! only its set bits, sorted, which keeps the huge nominal dimension
//! (`|V| * M * Q` per side) affordable. Distributions without real vertices
//! (the single-edge toy families) embed into the same space with `vertex`
//! reused as a row index and `slot = 0`.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    X,
    Y,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::X => Side::Y,
            Side::Y => Side::X,
        }
    }
}

/// Address of one boolean variable.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Coord {
    pub side: Side,
    pub vertex: u32,
    pub label: u32,
    pub slot: u32,
}

impl Coord {
    pub fn new(side: Side, vertex: u32, label: u32, slot: u32) -> Self {
        Coord { side, vertex, label, slot }
    }
}

/// Internal draws made while sampling one point, kept for auditing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transcript {
    Basic {
        /// Row whose Y-copy equals X on 1-points.
        star_row: Option<u32>,
    },
    Simplified {
        blocks: Vec<SimplifiedBlockDraw>,
    },
    Global {
        blocks: Vec<GlobalBlockDraw>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifiedBlockDraw {
    /// Noise-side bit: false puts noise rows on the X side.
    pub b: bool,
    /// Chosen half of the rows (the signal-eligible half).
    pub rows: Vec<u32>,
    pub row_x: u32,
    pub row_y: u32,
    /// Outcome of the 1/k coin on 0-points.
    pub accepted: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalBlockDraw {
    /// Noise-side bit: false noises the X side of this block.
    pub b: bool,
    /// Signal-eligible vertices on the X side.
    pub s_x: Vec<u32>,
    /// Signal-eligible vertices on the Y side.
    pub s_y: Vec<u32>,
    /// Indicator host on the X side (1-points only).
    pub host_x: Option<u32>,
    /// Indicator host on the Y side (1-points only).
    pub host_y: Option<u32>,
    /// Whether the low-probability indicator branch fired (0-points only).
    pub gate_fired: Option<bool>,
    /// Thinned subset that received indicator blocks (0-points only).
    pub thinned: Vec<u32>,
}

/// One labeled sample: the binary label, the hyperedge it was drawn on (if
/// any), the set coordinates, and the audit transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub label: bool,
    pub edge: Option<u32>,
    pub bits: Vec<Coord>,
    /// `(seed, index)` stream key the point was drawn from, when known.
    pub rng_key: Option<(u64, u64)>,
    pub transcript: Option<Transcript>,
}

#[derive(Debug, Error)]
pub enum PointFormatError {
    #[error("malformed point line: {0}")]
    Malformed(String),
}

impl SamplePoint {
    pub fn new(label: bool) -> Self {
        SamplePoint { label, edge: None, bits: Vec::new(), rng_key: None, transcript: None }
    }

    /// Sorts and dedups the bit list; call once after pushing raw bits.
    pub fn finalize(&mut self) {
        self.bits.sort_unstable();
        let before = self.bits.len();
        self.bits.dedup();
        debug_assert_eq!(before, self.bits.len(), "sampler set the same coordinate twice");
    }

    pub fn is_set(&self, coord: &Coord) -> bool {
        self.bits.binary_search(coord).is_ok()
    }

    pub fn ones(&self) -> usize {
        self.bits.len()
    }

    /// Iterates set bits on one side.
    pub fn side_bits(&self, side: Side) -> impl Iterator<Item = &Coord> {
        self.bits.iter().filter(move |c| c.side == side)
    }

    /// Serializes to the dataset line format
    /// `{"a":0|1,"edge":id,"x":[[v,i,q],...],"y":[[v,i,q],...]}`.
    pub fn to_jsonl(&self) -> String {
        let xs: Vec<[u32; 3]> = self
            .side_bits(Side::X)
            .map(|c| [c.vertex, c.label, c.slot])
            .collect();
        let ys: Vec<[u32; 3]> = self
            .side_bits(Side::Y)
            .map(|c| [c.vertex, c.label, c.slot])
            .collect();
        let mut obj = json!({ "a": if self.label { 1 } else { 0 }, "x": xs, "y": ys });
        if let Some(e) = self.edge {
            obj["edge"] = json!(e);
        }
        obj.to_string()
    }

    pub fn from_jsonl(line: &str) -> Result<Self, PointFormatError> {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| PointFormatError::Malformed(e.to_string()))?;
        let a = v
            .get("a")
            .and_then(|a| a.as_u64())
            .ok_or_else(|| PointFormatError::Malformed("missing label field \"a\"".into()))?;
        if a > 1 {
            return Err(PointFormatError::Malformed(format!("label must be 0 or 1, got {a}")));
        }
        let mut point = SamplePoint::new(a == 1);
        point.edge = v.get("edge").and_then(|e| e.as_u64()).map(|e| e as u32);
        for (key, side) in [("x", Side::X), ("y", Side::Y)] {
            let Some(arr) = v.get(key) else { continue };
            let arr = arr
                .as_array()
                .ok_or_else(|| PointFormatError::Malformed(format!("field {key:?} not an array")))?;
            for triple in arr {
                let t = triple.as_array().filter(|t| t.len() == 3).ok_or_else(|| {
                    PointFormatError::Malformed(format!("bit in {key:?} is not a [v,i,q] triple"))
                })?;
                let mut nums = [0u32; 3];
                for (n, item) in nums.iter_mut().zip(t) {
                    *n = item
                        .as_u64()
                        .ok_or_else(|| PointFormatError::Malformed("non-integer bit index".into()))?
                        as u32;
                }
                point.bits.push(Coord::new(side, nums[0], nums[1], nums[2]));
            }
        }
        point.bits.sort_unstable();
        point.bits.dedup();
        Ok(point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_preserves_bits_label_and_edge() {
        let mut p = SamplePoint::new(true);
        p.edge = Some(3);
        p.bits.push(Coord::new(Side::Y, 2, 7, 1));
        p.bits.push(Coord::new(Side::X, 0, 4, 0));
        p.finalize();
        let back = SamplePoint::from_jsonl(&p.to_jsonl()).unwrap();
        assert_eq!(back.label, p.label);
        assert_eq!(back.edge, p.edge);
        assert_eq!(back.bits, p.bits);
    }

    #[test]
    fn rejects_missing_label() {
        assert!(SamplePoint::from_jsonl("{\"x\":[]}").is_err());
    }

    #[test]
    fn rejects_bad_label_value() {
        assert!(SamplePoint::from_jsonl("{\"a\":2,\"x\":[],\"y\":[]}").is_err());
    }

    #[test]
    fn is_set_uses_sorted_lookup() {
        let mut p = SamplePoint::new(false);
        for i in 0..10 {
            p.bits.push(Coord::new(Side::X, 0, i, 0));
        }
        p.finalize();
        assert!(p.is_set(&Coord::new(Side::X, 0, 4, 0)));
        assert!(!p.is_set(&Coord::new(Side::Y, 0, 4, 0)));
    }
}

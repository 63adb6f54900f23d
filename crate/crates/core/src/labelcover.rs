//! Regular 2k-uniform label cover instances with per-edge projections.
//!
//! Every hyperedge touches `2k` distinct vertices split into an X half and a
//! Y half, and carries one projection per incident vertex from the big label
//! set into the small one. Projections respect a preimage bound `d`. The
//! planted builder hides a labeling that strongly satisfies every edge, which
//! is what the completeness checks run against.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attempts per projection before giving up on the preimage bound.
const PROJECTION_RETRIES: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("need at least 2k = {need} vertices, have {have}")]
    TooFewVertices { need: usize, have: usize },
    #[error("instance needs at least one hyperedge")]
    NoEdges,
    #[error("small label count must be at least 1 and at most the big label count")]
    BadLabelCounts,
    #[error("preimage bound d={d} cannot cover {big} big labels with {small} small ones")]
    InfeasiblePreimageBound { d: u32, big: u32, small: u32 },
    #[error("could not satisfy the preimage bound after {0} retries")]
    ProjectionRetriesExhausted(usize),
    #[error("vertex {0} is not part of the instance")]
    UnknownVertex(u32),
    #[error("vertex {0} has no incident edges")]
    IsolatedVertex(u32),
    #[error("need at least two distinct labels to sample pairs")]
    NotEnoughLabels,
    #[error("pair sample count must be positive")]
    EmptyPairSample,
    #[error("labeling misses vertex {0}")]
    MissingLabel(u32),
    #[error("label {label} out of range for vertex {vertex}")]
    LabelOutOfRange { vertex: u32, label: u32 },
    #[error("edge {edge}: {reason}")]
    MalformedEdge { edge: usize, reason: String },
}

/// One hyperedge: vertex list, its two halves, and a projection per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperedge {
    /// All 2k touched vertices, X half first.
    pub vids: Vec<u32>,
    pub ex: Vec<u32>,
    pub ey: Vec<u32>,
    /// Per vertex, the small label assigned to each big label.
    pub proj: BTreeMap<u32, Vec<u32>>,
}

impl Hyperedge {
    /// Projected small label of `big` at `vertex`.
    pub fn project(&self, vertex: u32, big: u32) -> u32 {
        self.proj[&vertex][big as usize]
    }

    /// Big labels mapping to `small` at `vertex`.
    pub fn preimage(&self, vertex: u32, small: u32) -> Vec<u32> {
        self.proj[&vertex]
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == small)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn contains(&self, vertex: u32) -> bool {
        self.proj.contains_key(&vertex)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelCoverInstance {
    pub k: usize,
    #[serde(rename = "M")]
    pub big_labels: u32,
    #[serde(rename = "m")]
    pub small_labels: u32,
    pub d: u32,
    pub vertices: u32,
    pub edges: Vec<Hyperedge>,
}

/// Vertex labeling with big labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeling(pub BTreeMap<u32, u32>);

#[derive(Clone, Copy, Debug)]
pub struct InstanceConfig {
    pub vertices: u32,
    pub edges: usize,
    pub k: usize,
    pub big_labels: u32,
    pub small_labels: u32,
    pub d: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairSelection {
    /// Every unordered pair of distinct big labels.
    All,
    /// A fixed number of uniformly drawn distinct pairs.
    Sample(usize),
}

#[derive(Clone, Debug)]
pub struct SmoothnessReport {
    /// `(label_i, label_j, exact collision rate over incident edges)`.
    pub rates: Vec<(u32, u32, f64)>,
    pub max_rate: f64,
    pub incident_edges: usize,
}

impl SmoothnessReport {
    pub fn is_smooth(&self, j: f64) -> bool {
        self.max_rate <= 1.0 / j
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SatisfactionStats {
    pub total: usize,
    pub strong: usize,
    pub weak: usize,
    pub strong_frac: f64,
    pub weak_frac: f64,
}

fn check_config(cfg: &InstanceConfig) -> Result<(), InstanceError> {
    if (cfg.vertices as usize) < 2 * cfg.k || cfg.k == 0 {
        return Err(InstanceError::TooFewVertices {
            need: 2 * cfg.k.max(1),
            have: cfg.vertices as usize,
        });
    }
    if cfg.edges == 0 {
        return Err(InstanceError::NoEdges);
    }
    if cfg.small_labels == 0 || cfg.big_labels < cfg.small_labels {
        return Err(InstanceError::BadLabelCounts);
    }
    if cfg.d == 0 || cfg.big_labels > cfg.d.saturating_mul(cfg.small_labels) {
        return Err(InstanceError::InfeasiblePreimageBound {
            d: cfg.d,
            big: cfg.big_labels,
            small: cfg.small_labels,
        });
    }
    Ok(())
}

/// Draws a projection uniformly, re-drawing until the preimage bound holds.
/// `pin` fixes one big label's image first (used to plant satisfaction).
fn sample_projection(
    rng: &mut ChaCha8Rng,
    big: u32,
    small: u32,
    d: u32,
    pin: Option<(u32, u32)>,
) -> Result<Vec<u32>, InstanceError> {
    for _ in 0..PROJECTION_RETRIES {
        let mut proj = vec![0u32; big as usize];
        let mut load = vec![0u32; small as usize];
        if let Some((label, image)) = pin {
            proj[label as usize] = image;
            load[image as usize] += 1;
        }
        for i in 0..big {
            if pin.map(|(label, _)| label) == Some(i) {
                continue;
            }
            let image = rng.random_range(0..small);
            proj[i as usize] = image;
            load[image as usize] += 1;
        }
        if load.iter().all(|&c| c <= d) {
            return Ok(proj);
        }
    }
    Err(InstanceError::ProjectionRetriesExhausted(PROJECTION_RETRIES))
}

fn build(
    cfg: InstanceConfig,
    seed: u64,
    planted: Option<&Labeling>,
) -> Result<LabelCoverInstance, InstanceError> {
    check_config(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(cfg.edges);
    for _ in 0..cfg.edges {
        let mut vids: Vec<u32> = rand::seq::index::sample(&mut rng, cfg.vertices as usize, 2 * cfg.k)
            .into_iter()
            .map(|v| v as u32)
            .collect();
        vids.shuffle(&mut rng);
        let ex = vids[..cfg.k].to_vec();
        let ey = vids[cfg.k..].to_vec();
        let target = rng.random_range(0..cfg.small_labels);
        let mut proj = BTreeMap::new();
        for &v in &vids {
            let pin = planted.map(|l| (l.0[&v], target));
            let p = sample_projection(&mut rng, cfg.big_labels, cfg.small_labels, cfg.d, pin)?;
            proj.insert(v, p);
        }
        edges.push(Hyperedge { vids, ex, ey, proj });
    }
    Ok(LabelCoverInstance {
        k: cfg.k,
        big_labels: cfg.big_labels,
        small_labels: cfg.small_labels,
        d: cfg.d,
        vertices: cfg.vertices,
        edges,
    })
}

/// Builds an instance together with a hidden labeling that strongly
/// satisfies every hyperedge.
pub fn build_planted(
    cfg: InstanceConfig,
    seed: u64,
) -> Result<(LabelCoverInstance, Labeling), InstanceError> {
    check_config(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
    let labeling = Labeling(
        (0..cfg.vertices)
            .map(|v| (v, rng.random_range(0..cfg.big_labels)))
            .collect(),
    );
    let instance = build(cfg, seed, Some(&labeling))?;
    Ok((instance, labeling))
}

/// Builds an instance with independent uniform projections (no plant).
pub fn build_random(cfg: InstanceConfig, seed: u64) -> Result<LabelCoverInstance, InstanceError> {
    build(cfg, seed, None)
}

impl LabelCoverInstance {
    /// Structural validation of an instance from any source.
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.edges.is_empty() {
            return Err(InstanceError::NoEdges);
        }
        if self.small_labels == 0 || self.big_labels < self.small_labels {
            return Err(InstanceError::BadLabelCounts);
        }
        for (idx, e) in self.edges.iter().enumerate() {
            let fail = |reason: String| InstanceError::MalformedEdge { edge: idx, reason };
            if e.ex.len() != self.k || e.ey.len() != self.k {
                return Err(fail(format!(
                    "halves have sizes {}/{}, expected {}",
                    e.ex.len(),
                    e.ey.len(),
                    self.k
                )));
            }
            let joined: Vec<u32> = e.ex.iter().chain(&e.ey).copied().collect();
            if joined != e.vids {
                return Err(fail("vids is not ex followed by ey".into()));
            }
            let mut sorted = e.vids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != 2 * self.k {
                return Err(fail("vertices repeat within the edge".into()));
            }
            for &v in &e.vids {
                if v >= self.vertices {
                    return Err(fail(format!("vertex {v} out of range")));
                }
                let Some(p) = e.proj.get(&v) else {
                    return Err(fail(format!("no projection for vertex {v}")));
                };
                if p.len() != self.big_labels as usize {
                    return Err(fail(format!("projection at {v} covers {} labels", p.len())));
                }
                let mut load = vec![0u32; self.small_labels as usize];
                for &s in p {
                    if s >= self.small_labels {
                        return Err(fail(format!("projection value {s} out of range at {v}")));
                    }
                    load[s as usize] += 1;
                }
                if let Some(&worst) = load.iter().max() {
                    if worst > self.d {
                        return Err(fail(format!(
                            "preimage of size {worst} exceeds bound {} at {v}",
                            self.d
                        )));
                    }
                }
            }
            if e.proj.len() != 2 * self.k {
                return Err(fail("projection table mentions foreign vertices".into()));
            }
        }
        Ok(())
    }

    /// Ids of edges touching `vertex`.
    pub fn incident_edges(&self, vertex: u32) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.contains(vertex))
            .map(|(i, _)| i)
            .collect()
    }

    /// Exact collision rate of projected label pairs over the edges incident
    /// to `vertex`. Pairs are either exhaustive or sampled; the rate per pair
    /// is exact (incident edges are enumerated, not sampled).
    pub fn check_smoothness(
        &self,
        vertex: u32,
        selection: PairSelection,
        rng: &mut impl Rng,
    ) -> Result<SmoothnessReport, InstanceError> {
        if vertex >= self.vertices {
            return Err(InstanceError::UnknownVertex(vertex));
        }
        let incident = self.incident_edges(vertex);
        if incident.is_empty() {
            return Err(InstanceError::IsolatedVertex(vertex));
        }
        if self.big_labels < 2 {
            return Err(InstanceError::NotEnoughLabels);
        }
        let pairs: Vec<(u32, u32)> = match selection {
            PairSelection::All => (0..self.big_labels)
                .flat_map(|i| (i + 1..self.big_labels).map(move |j| (i, j)))
                .collect(),
            PairSelection::Sample(0) => return Err(InstanceError::EmptyPairSample),
            PairSelection::Sample(n) => (0..n)
                .map(|_| {
                    let i = rng.random_range(0..self.big_labels);
                    let mut j = rng.random_range(0..self.big_labels - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i.min(j), i.max(j))
                })
                .collect(),
        };
        let mut rates = Vec::with_capacity(pairs.len());
        let mut max_rate: f64 = 0.0;
        for (i, j) in pairs {
            let collisions = incident
                .iter()
                .filter(|&&e| {
                    let edge = &self.edges[e];
                    edge.project(vertex, i) == edge.project(vertex, j)
                })
                .count();
            let rate = collisions as f64 / incident.len() as f64;
            max_rate = max_rate.max(rate);
            rates.push((i, j, rate));
        }
        Ok(SmoothnessReport { rates, max_rate, incident_edges: incident.len() })
    }

    /// Strong and weak satisfaction fractions of `labeling`.
    pub fn evaluate_labeling(&self, labeling: &Labeling) -> Result<SatisfactionStats, InstanceError> {
        let mut strong = 0;
        let mut weak = 0;
        for e in &self.edges {
            let mut projected = Vec::with_capacity(2 * self.k);
            for &v in &e.vids {
                let &label = labeling.0.get(&v).ok_or(InstanceError::MissingLabel(v))?;
                if label >= self.big_labels {
                    return Err(InstanceError::LabelOutOfRange { vertex: v, label });
                }
                projected.push(e.project(v, label));
            }
            if projected.iter().all(|&p| p == projected[0]) {
                strong += 1;
            }
            let any_pair = projected
                .iter()
                .enumerate()
                .any(|(a, &pa)| projected.iter().skip(a + 1).any(|&pb| pa == pb));
            if any_pair {
                weak += 1;
            }
        }
        let total = self.edges.len();
        Ok(SatisfactionStats {
            total,
            strong,
            weak,
            strong_frac: strong as f64 / total as f64,
            weak_frac: weak as f64 / total as f64,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn write_file(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn read_file(path: &Path) -> Result<Self, Box<dyn std::error::Error>> {
        Ok(Self::from_json(&std::fs::read_to_string(path)?)?)
    }
}

impl Labeling {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("labeling serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn write_file(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn read_file(path: &Path) -> Result<Self, Box<dyn std::error::Error>> {
        Ok(Self::from_json(&std::fs::read_to_string(path)?)?)
    }
}

//! Adversarial learner harness: sample datasets from the point
//! distributions, train halfspaces and boolean combiners on them, and
//! measure accuracy on fresh draws. Feature space is restricted to the
//! coordinates actually observed in training; everything else implicitly
//! carries coefficient zero.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{BooleanOfHalfspaces, Classifier, ClassifyError, Halfspace};
use crate::gadget::PointSampler;
use crate::point::{Coord, SamplePoint};
use crate::report::wilson_ci;
use crate::rng::{mc_fold, stream_rng};

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("training needs a nonempty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// Labeled sample with a stable enumeration of every coordinate observed
/// across its points.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub points: Vec<SamplePoint>,
    pub feature_index: Vec<Coord>,
}

impl Dataset {
    pub fn from_points(points: Vec<SamplePoint>) -> Result<Self, ProbeError> {
        if points.is_empty() {
            return Err(ProbeError::EmptyDataset);
        }
        let mut feature_index: Vec<Coord> =
            points.iter().flat_map(|p| p.bits.iter().copied()).collect();
        feature_index.sort_unstable();
        feature_index.dedup();
        Ok(Dataset { points, feature_index })
    }

    pub fn from_sampler(
        sampler: &dyn PointSampler,
        n: u64,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        let points = mc_fold(
            n,
            Vec::with_capacity(n as usize),
            |i| sampler.sample_point(seed, i),
            |mut acc: Vec<SamplePoint>, p| {
                acc.push(p);
                acc
            },
        );
        Self::from_points(points)
    }

    fn dense(&self) -> Vec<Vec<u32>> {
        self.points
            .iter()
            .map(|p| {
                p.bits
                    .iter()
                    .map(|b| {
                        self.feature_index
                            .binary_search(b)
                            .expect("feature index covers every set bit") as u32
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Perceptron,
    AveragedPerceptron,
    LogisticSgd,
}

/// Trains one halfspace over the dataset's observed coordinates. Epoch
/// order is reshuffled from the seed, so identical inputs give identical
/// coefficients. Zero coefficients are dropped from the output.
pub fn train_halfspace(
    dataset: &Dataset,
    method: TrainMethod,
    epochs: u32,
    seed: u64,
) -> Result<Halfspace, ProbeError> {
    if dataset.points.is_empty() {
        return Err(ProbeError::EmptyDataset);
    }
    let rows = dataset.dense();
    let labels: Vec<bool> = dataset.points.iter().map(|p| p.label).collect();
    let nf = dataset.feature_index.len();
    let mut w = vec![0.0f64; nf];
    let mut b = 0.0f64;
    // Running sums for the averaged variant, accumulated after every step.
    let mut w_sum = vec![0.0f64; nf];
    let mut b_sum = 0.0f64;
    let mut steps = 0u64;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = stream_rng(seed, 0);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let lr = 0.5 / (1.0 + epoch as f64);
        for &i in &order {
            let z = b + rows[i].iter().map(|&f| w[f as usize]).sum::<f64>();
            match method {
                TrainMethod::Perceptron | TrainMethod::AveragedPerceptron => {
                    let predicted = z >= 0.0;
                    if predicted != labels[i] {
                        let y = if labels[i] { 1.0 } else { -1.0 };
                        for &f in &rows[i] {
                            w[f as usize] += y;
                        }
                        b += y;
                    }
                }
                TrainMethod::LogisticSgd => {
                    let target = if labels[i] { 1.0 } else { 0.0 };
                    let g = 1.0 / (1.0 + (-z).exp()) - target;
                    for &f in &rows[i] {
                        w[f as usize] -= lr * g;
                    }
                    b -= lr * g;
                }
            }
            if method == TrainMethod::AveragedPerceptron {
                for (s, &v) in w_sum.iter_mut().zip(&w) {
                    *s += v;
                }
                b_sum += b;
                steps += 1;
            }
        }
    }
    if method == TrainMethod::AveragedPerceptron && steps > 0 {
        let inv = 1.0 / steps as f64;
        for (v, s) in w.iter_mut().zip(&w_sum) {
            *v = s * inv;
        }
        b = b_sum * inv;
    }
    let coeffs = dataset
        .feature_index
        .iter()
        .zip(&w)
        .filter(|&(_, &v)| v != 0.0)
        .map(|(&c, &v)| (c, v));
    Ok(Halfspace::new(coeffs, b))
}

/// Fits the best boolean combiner of the given halfspaces on the dataset:
/// each sign pattern's table entry becomes the majority training label for
/// that pattern, ties and unseen patterns resolving to 1.
pub fn fit_combiner(
    halfspaces: Vec<Halfspace>,
    dataset: &Dataset,
) -> Result<BooleanOfHalfspaces, ProbeError> {
    let ell = halfspaces.len();
    if ell > 20 {
        return Err(ClassifyError::TooManyHalfspaces(ell).into());
    }
    let probe = BooleanOfHalfspaces::new(halfspaces, vec![true; 1 << ell])?;
    let mut ones = vec![0u64; 1 << ell];
    let mut zeros = vec![0u64; 1 << ell];
    for p in &dataset.points {
        let pattern = probe.sign_pattern(p);
        if p.label {
            ones[pattern] += 1;
        } else {
            zeros[pattern] += 1;
        }
    }
    let table: Vec<bool> = ones.iter().zip(&zeros).map(|(&o, &z)| o >= z).collect();
    Ok(BooleanOfHalfspaces::new(probe.halfspaces, table)?)
}

/// Fraction of dataset points the classifier labels correctly.
pub fn dataset_accuracy(classifier: &dyn Classifier, dataset: &Dataset) -> f64 {
    let hits = dataset
        .points
        .iter()
        .filter(|p| classifier.classify(p) == p.label)
        .count();
    hits as f64 / dataset.points.len() as f64
}

/// Accuracy on `n` fresh draws from the sampler, with a Wilson interval.
pub fn accuracy(
    classifier: &(dyn Classifier + Sync),
    sampler: &dyn PointSampler,
    n: u64,
    seed: u64,
) -> (f64, [f64; 2]) {
    assert!(n >= 1, "accuracy needs at least one sample");
    let hits = mc_fold(
        n,
        0u64,
        |i| {
            let p = sampler.sample_point(seed, i);
            (classifier.classify(&p) == p.label) as u64
        },
        |acc, h| acc + h,
    );
    (hits as f64 / n as f64, wilson_ci(hits, n))
}

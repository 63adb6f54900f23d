//! Classifiers evaluated over sparse sample points.
//!
//! The sign convention is `pos(x) = 1` iff `x >= 0`, so a zero margin counts
//! as a positive classification everywhere. Halfspaces sum only over the set
//! bits of a point with compensated accumulation; fixtures whose coefficients
//! are integers can opt into an exact i128 path and are immune to float
//! rounding by construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelcover::Labeling;
use crate::point::{Coord, SamplePoint, Side};
use crate::sum::CompensatedSum;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("truth table has {got} entries, expected 2^{ell} = {expected}")]
    TableSize { ell: usize, expected: usize, got: usize },
    #[error("combiner supports at most 20 halfspaces, got {0}")]
    TooManyHalfspaces(usize),
    #[error("exact coefficients must be integers with magnitude below 2^53")]
    ExactRange,
    #[error("power-sum detector supports at most {max} labels, got {got}")]
    PowerSumRange { max: u32, got: u32 },
}

pub trait Classifier {
    fn classify(&self, point: &SamplePoint) -> bool;
}

/// Sparse linear threshold function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "HalfspaceWire", into = "HalfspaceWire")]
pub struct Halfspace {
    pub coeffs: BTreeMap<Coord, f64>,
    pub theta: f64,
    /// Evaluate in i128; requires integral coefficients and threshold.
    pub exact: bool,
}

#[derive(Serialize, Deserialize)]
struct HalfspaceWire {
    coeffs: Vec<(Side, u32, u32, u32, f64)>,
    theta: f64,
    #[serde(default)]
    exact: bool,
}

impl From<HalfspaceWire> for Halfspace {
    fn from(w: HalfspaceWire) -> Self {
        Halfspace {
            coeffs: w
                .coeffs
                .into_iter()
                .map(|(s, v, i, q, c)| (Coord::new(s, v, i, q), c))
                .collect(),
            theta: w.theta,
            exact: w.exact,
        }
    }
}

impl From<Halfspace> for HalfspaceWire {
    fn from(h: Halfspace) -> Self {
        HalfspaceWire {
            coeffs: h
                .coeffs
                .into_iter()
                .map(|(c, v)| (c.side, c.vertex, c.label, c.slot, v))
                .collect(),
            theta: h.theta,
            exact: h.exact,
        }
    }
}

fn is_exactly_integral(x: f64) -> bool {
    x.fract() == 0.0 && x.abs() < (1u64 << 53) as f64
}

impl Halfspace {
    pub fn new(coeffs: impl IntoIterator<Item = (Coord, f64)>, theta: f64) -> Self {
        Halfspace { coeffs: coeffs.into_iter().collect(), theta, exact: false }
    }

    /// Integer-coefficient halfspace evaluated exactly.
    pub fn new_exact(
        coeffs: impl IntoIterator<Item = (Coord, i64)>,
        theta: i64,
    ) -> Result<Self, ClassifyError> {
        let coeffs: BTreeMap<Coord, f64> =
            coeffs.into_iter().map(|(c, v)| (c, v as f64)).collect();
        if coeffs.values().any(|&v| !is_exactly_integral(v)) {
            return Err(ClassifyError::ExactRange);
        }
        Ok(Halfspace { coeffs, theta: theta as f64, exact: true })
    }

    /// Signed margin with compensated accumulation.
    pub fn margin(&self, point: &SamplePoint) -> f64 {
        let mut acc = CompensatedSum::new();
        acc.add(self.theta);
        for bit in &point.bits {
            if let Some(&c) = self.coeffs.get(bit) {
                acc.add(c);
            }
        }
        acc.value()
    }

    /// Exact integer margin; only meaningful when `exact` is set.
    pub fn margin_exact(&self, point: &SamplePoint) -> i128 {
        debug_assert!(is_exactly_integral(self.theta));
        let mut acc = self.theta as i128;
        for bit in &point.bits {
            if let Some(&c) = self.coeffs.get(bit) {
                debug_assert!(is_exactly_integral(c));
                acc += c as i128;
            }
        }
        acc
    }

    /// Same halfspace with all signs flipped.
    pub fn negated(&self) -> Halfspace {
        Halfspace {
            coeffs: self.coeffs.iter().map(|(&c, &v)| (c, -v)).collect(),
            theta: -self.theta,
            exact: self.exact,
        }
    }
}

impl Classifier for Halfspace {
    fn classify(&self, point: &SamplePoint) -> bool {
        if self.exact {
            self.margin_exact(point) >= 0
        } else {
            self.margin(point) >= 0.0
        }
    }
}

/// Arbitrary boolean of up to 20 halfspaces via an explicit truth table.
/// Table index packs the halfspace signs little-endian: halfspace `s`
/// contributes bit `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BooleanOfHalfspaces {
    pub halfspaces: Vec<Halfspace>,
    pub table: Vec<bool>,
}

impl BooleanOfHalfspaces {
    pub fn new(halfspaces: Vec<Halfspace>, table: Vec<bool>) -> Result<Self, ClassifyError> {
        let ell = halfspaces.len();
        if ell > 20 {
            return Err(ClassifyError::TooManyHalfspaces(ell));
        }
        let expected = 1usize << ell;
        if table.len() != expected {
            return Err(ClassifyError::TableSize { ell, expected, got: table.len() });
        }
        Ok(BooleanOfHalfspaces { halfspaces, table })
    }

    pub fn sign_pattern(&self, point: &SamplePoint) -> usize {
        self.halfspaces
            .iter()
            .enumerate()
            .fold(0usize, |acc, (s, h)| acc | ((h.classify(point) as usize) << s))
    }
}

impl Classifier for BooleanOfHalfspaces {
    fn classify(&self, point: &SamplePoint) -> bool {
        self.table[self.sign_pattern(point)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub coord: Coord,
    pub negated: bool,
}

impl Literal {
    pub fn pos(coord: Coord) -> Self {
        Literal { coord, negated: false }
    }

    pub fn neg(coord: Coord) -> Self {
        Literal { coord, negated: true }
    }

    fn holds(&self, point: &SamplePoint) -> bool {
        point.is_set(&self.coord) != self.negated
    }
}

/// Conjunction of disjunctions of literals. An empty clause list accepts
/// every point; an empty clause rejects every point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnfFormula {
    pub clauses: Vec<Vec<Literal>>,
}

impl Classifier for CnfFormula {
    fn classify(&self, point: &SamplePoint) -> bool {
        self.clauses
            .iter()
            .all(|clause| clause.iter().any(|lit| lit.holds(point)))
    }
}

/// Serializable wrapper over every classifier shape this crate produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AnyClassifier {
    Halfspace(Halfspace),
    Combiner(BooleanOfHalfspaces),
    Cnf(CnfFormula),
}

impl Classifier for AnyClassifier {
    fn classify(&self, point: &SamplePoint) -> bool {
        match self {
            AnyClassifier::Halfspace(h) => h.classify(point),
            AnyClassifier::Combiner(b) => b.classify(point),
            AnyClassifier::Cnf(c) => c.classify(point),
        }
    }
}

/// The two disjunctions that recover the label on planted instances, plus
/// their conjunction: `c1` fires on any X bit at a labeled position, `c2`
/// on any Y bit, and `both` is the exact completeness classifier.
#[derive(Clone, Debug)]
pub struct CompletenessClassifiers {
    pub c1: CnfFormula,
    pub c2: CnfFormula,
    pub both: CnfFormula,
}

/// Builds the completeness disjunctions for `labeling` with `q` slots per
/// block.
pub fn completeness_cnf(labeling: &Labeling, q: usize) -> CompletenessClassifiers {
    let clause = |side: Side| -> Vec<Literal> {
        labeling
            .0
            .iter()
            .flat_map(|(&v, &label)| {
                (0..q as u32).map(move |slot| Literal::pos(Coord::new(side, v, label, slot)))
            })
            .collect()
    };
    let cx = clause(Side::X);
    let cy = clause(Side::Y);
    CompletenessClassifiers {
        c1: CnfFormula { clauses: vec![cx.clone()] },
        c2: CnfFormula { clauses: vec![cy.clone()] },
        both: CnfFormula { clauses: vec![cx, cy] },
    }
}

/// First-moment attack on the single-edge toy distribution: thresholds the
/// number of set X bits at 3/4 of the label count.
pub fn moment_attack(labels: u32) -> Halfspace {
    let coeffs = (0..labels).map(|i| (Coord::new(Side::X, 0, i, 0), 1.0));
    Halfspace::new(coeffs, -0.75 * labels as f64)
}

const POWER_SUM_MAX_LABELS: u32 = 50;

/// Exact detector for the toy distribution: the signed power sum
/// `L = sum_i 2^i X_i - sum_{r,i} 2^i Y_{r,i}` vanishes exactly on 1-points
/// and never on 0-points. Classifies via `pos(L) AND pos(-L)`.
pub fn pathological_pair(labels: u32, k: usize) -> Result<BooleanOfHalfspaces, ClassifyError> {
    if labels > POWER_SUM_MAX_LABELS {
        return Err(ClassifyError::PowerSumRange { max: POWER_SUM_MAX_LABELS, got: labels });
    }
    let mut coeffs: Vec<(Coord, i64)> = Vec::new();
    for i in 0..labels {
        coeffs.push((Coord::new(Side::X, 0, i, 0), 1i64 << i));
        for r in 0..k as u32 {
            coeffs.push((Coord::new(Side::Y, r, i, 0), -(1i64 << i)));
        }
    }
    let plus = Halfspace::new_exact(coeffs, 0)?;
    let minus = plus.negated();
    // AND of the two signs: only the both-positive pattern (index 3) accepts.
    BooleanOfHalfspaces::new(vec![plus, minus], vec![false, false, false, true])
}

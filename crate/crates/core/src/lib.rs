//! Desk-scale laboratory for hardness-of-learning gadget constructions.
//!
//! The crate builds smooth label cover instances, samples the point-label
//! distributions used in halfspace-hardness reductions, and checks the
//! structural lemmas behind them (critical indices, truncation,
//! anti-concentration, variance bounds, decoding) with exact oracles where
//! feasible and seeded Monte Carlo everywhere else.

pub mod anticonc;
pub mod classify;
pub mod critical;
pub mod decode;
pub mod gadget;
pub mod labelcover;
pub mod params;
pub mod point;
pub mod probe;
pub mod report;
pub mod rng;
pub mod sum;

pub use classify::{BooleanOfHalfspaces, Classifier, CnfFormula, Halfspace};
pub use labelcover::{LabelCoverInstance, Labeling};
pub use params::GadgetParams;
pub use point::{Coord, SamplePoint, Side};

//! Shared report shapes and interval helpers for the Monte Carlo checks.
//!
//! Every statistical operation in this crate emits the same JSON envelope:
//! `{estimate, ci95, bound, bound_vacuous, params, seed, trials}`. Bounds
//! whose value exceeds 1 are still reported but flagged vacuous, since a
//! probability estimate can never violate them.

use serde::{Deserialize, Serialize};

/// Two-sided 97.5% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64) -> [f64; 2] {
    if trials == 0 {
        return [0.0, 1.0];
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The closed forms at the boundary are exactly 0 and 1; pin them so
    // degenerate counts round-trip without floating-point residue.
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    [lo, hi]
}

/// Normal-approximation interval around a sample mean with the given
/// standard error.
pub fn normal_ci(mean: f64, stderr: f64) -> [f64; 2] {
    [mean - Z95 * stderr, mean + Z95 * stderr]
}

/// Common envelope for one Monte Carlo or exact check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub estimate: f64,
    pub ci95: [f64; 2],
    pub bound: Option<f64>,
    pub bound_vacuous: bool,
    /// Operation-specific knobs, echoed so the run can be reproduced.
    pub params: serde_json::Value,
    pub seed: u64,
    pub trials: u64,
}

impl McReport {
    pub fn new(estimate: f64, ci95: [f64; 2], seed: u64, trials: u64) -> Self {
        McReport {
            estimate,
            ci95,
            bound: None,
            bound_vacuous: false,
            params: serde_json::Value::Null,
            seed,
            trials,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound_vacuous = !(bound <= 1.0);
        self.bound = Some(bound);
        self
    }

    /// Attach a bound that is not a probability, so exceeding 1 does not
    /// make it vacuous (variance bounds, for instance).
    pub fn with_scale_bound(mut self, bound: f64) -> Self {
        self.bound_vacuous = false;
        self.bound = Some(bound);
        self
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    /// True when the estimate respects the bound, or the bound is vacuous.
    pub fn within_bound(&self) -> bool {
        match self.bound {
            Some(b) => self.bound_vacuous || self.estimate <= b,
            None => true,
        }
    }
}

/// Provenance block embedded in every CLI report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub git_describe: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub paper_faithful: bool,
}

impl RunMeta {
    pub fn capture(seed: u64, params: serde_json::Value, paper_faithful: bool) -> Self {
        let git_describe = std::process::Command::new("git")
            .args(["describe", "--always", "--dirty"])
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
            .unwrap_or_else(|| "unknown".to_string());
        RunMeta { git_describe, seed, params, paper_faithful }
    }
}

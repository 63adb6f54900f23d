//! Parameter derivation for the gadget distributions.
//!
//! `derive` computes the full parameter chain from the four free inputs
//! (0-point bias `zeta`, accuracy slack `nu`, halfspace budget `ell`, size
//! exponent `z`). All logarithms are natural. Any override clears
//! `paper_faithful`, so downstream reports can tell desk-scale runs from
//! runs in the regime the bounds were derived for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("zeta must lie strictly between 0 and 1, got {0}")]
    BadZeta(f64),
    #[error("nu must lie strictly between 0 and 1, got {0}")]
    BadNu(f64),
    #[error("ell must be at least 1")]
    BadEll,
    #[error("z must be at least 1")]
    BadZ,
    #[error("override value must be positive")]
    BadOverride,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GadgetParams {
    /// Probability that a block noises its X side (`b_j = 0`).
    pub zeta: f64,
    /// Target accuracy slack of the reduction.
    pub nu: f64,
    /// Number of halfspaces the soundness argument handles.
    pub ell: usize,
    /// Size exponent; the projection preimage bound is `4^z`.
    pub z: u32,
    /// Projection preimage bound.
    pub d: u32,
    /// Half the hyperedge size.
    pub k: usize,
    /// Size of the signal-eligible vertex subsets per block.
    pub t: usize,
    /// Slots per indicator block.
    pub q: usize,
    /// Regularity threshold for critical index computations.
    pub tau: f64,
    /// Cap on the number of critical blocks kept per vector.
    pub cap_k: u64,
    /// Smoothness parameter; instances should collide with rate at most `1/smooth_j`.
    pub smooth_j: f64,
    /// True only when every field comes from the derivation chain.
    pub paper_faithful: bool,
    /// Opt-in: clamp the 0-point indicator gate to 1 when the derived
    /// probability exceeds 1 instead of refusing to sample.
    pub clamp_zero_gate: bool,
}

fn ceil_to_even(x: f64) -> usize {
    let c = x.ceil() as usize;
    if c % 2 == 0 {
        c.max(2)
    } else {
        c + 1
    }
}

impl GadgetParams {
    /// Derives the full chain from the four free inputs.
    pub fn derive(zeta: f64, nu: f64, ell: usize, z: u32) -> Result<Self, ParamError> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(ParamError::BadZeta(zeta));
        }
        if !(nu > 0.0 && nu < 1.0) {
            return Err(ParamError::BadNu(nu));
        }
        if ell == 0 {
            return Err(ParamError::BadEll);
        }
        if z == 0 {
            return Err(ParamError::BadZ);
        }
        let spread = zeta * (1.0 - zeta);
        let d = 4u32.pow(z);
        let k = ceil_to_even(10.0 / (spread * spread));
        let t = (k / 4).max(1);
        let q = 16 * d as usize * k;
        let tau = (10.0 * k as f64 * (q as f64).ln()).powi(-2);
        let cap_k = ((20.0 / tau) * (q as f64 / tau).ln()).ceil() as u64;
        let dk = (d as f64) * (k as f64);
        let smooth_j = 1e3 * (ell as f64).powi(2) * dk.ln().powi(2) * (d as f64).powi(20)
            / (nu * spread * spread);
        Ok(GadgetParams {
            zeta,
            nu,
            ell,
            z,
            d,
            k,
            t,
            q,
            tau,
            cap_k,
            smooth_j,
            paper_faithful: true,
            clamp_zero_gate: false,
        })
    }

    /// Probability of the indicator branch for 0-points, before any clamping.
    pub fn zero_gate(&self) -> f64 {
        1.0 / (self.zeta * (1.0 - self.zeta) * self.t as f64)
    }

    /// Whether the 0-point gate is a genuine probability at these parameters.
    pub fn zero_gate_valid(&self) -> bool {
        self.zero_gate() <= 1.0
    }

    pub fn with_zeta(mut self, zeta: f64) -> Result<Self, ParamError> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(ParamError::BadZeta(zeta));
        }
        self.zeta = zeta;
        self.paper_faithful = false;
        Ok(self)
    }

    pub fn with_q(mut self, q: usize) -> Result<Self, ParamError> {
        if q == 0 {
            return Err(ParamError::BadOverride);
        }
        self.q = q;
        self.paper_faithful = false;
        Ok(self)
    }

    pub fn with_k(mut self, k: usize) -> Result<Self, ParamError> {
        if k == 0 {
            return Err(ParamError::BadOverride);
        }
        self.k = k;
        self.paper_faithful = false;
        Ok(self)
    }

    pub fn with_t(mut self, t: usize) -> Result<Self, ParamError> {
        if t == 0 {
            return Err(ParamError::BadOverride);
        }
        self.t = t;
        self.paper_faithful = false;
        Ok(self)
    }

    pub fn with_d(mut self, d: u32) -> Result<Self, ParamError> {
        if d == 0 {
            return Err(ParamError::BadOverride);
        }
        self.d = d;
        self.paper_faithful = false;
        Ok(self)
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self, ParamError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(ParamError::BadOverride);
        }
        self.tau = tau;
        self.paper_faithful = false;
        Ok(self)
    }

    pub fn with_cap_k(mut self, cap_k: u64) -> Result<Self, ParamError> {
        if cap_k == 0 {
            return Err(ParamError::BadOverride);
        }
        self.cap_k = cap_k;
        self.paper_faithful = false;
        Ok(self)
    }

    /// Allows sampling 0-points when the derived gate exceeds 1 by clamping
    /// it. Exactness of the completeness check does not depend on the gate,
    /// but per-coordinate marginal matching between the two labels does, so
    /// this is explicit opt-in and clears the faithful flag.
    pub fn with_clamped_zero_gate(mut self) -> Self {
        self.clamp_zero_gate = true;
        self.paper_faithful = false;
        self
    }
}

//! Small-ball probability oracles and the Monte Carlo concentration checks
//! that feed the soundness analysis: exact Littlewood-Offord mass for short
//! coefficient lists, its scaling in the summand count, the block-sum
//! variant with a threshold scan, a central-limit gap probe, and the three
//! gadget-facing estimators (noisy residual mass, coupled variance, coupled
//! sign deviation).
//!
//! Fitted multipliers below (`*_C` constants) are empirical calibrations of
//! asymptotic envelopes, chosen so the shipped fixtures satisfy them with
//! slack; bounds built from them carry a vacuity flag rather than silent
//! clamping when a parameter regime pushes them past 1.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::classify::{Classifier, Halfspace};
use crate::critical::{
    compute_iv_lv, critical_index, side_of, structural_conditions, truncate, BlockVector,
    CoeffSet, ConditionWitness, CriticalError, SidePair,
};
use crate::gadget::{GadgetError, GlobalSampler, PairedSampler};
use crate::point::Side;
use crate::report::{normal_ci, wilson_ci, McReport};
use crate::rng::{mc_fold, stream_rng};
use crate::sum::{csum, CompensatedSum};

/// Empirical envelope multiplier for the block small-ball mass at window
/// half-width `|c_T| / sqrt(T)`; the decay in the block count is the
/// substance, the constant is calibrated, not derived.
pub const BLOCK_LO_ENVELOPE_C: f64 = 3.0;

/// Universal central-limit gap multiplier for sums of independent symmetric
/// two-point summands: gap <= C * sum of normalized third absolute moments.
pub const BERRY_ESSEEN_ENVELOPE_C: f64 = 0.56;

/// Calibrated multiplier on the truncation term of the composed coupled
/// deviation bound.
pub const DEVIATION_TRUNCATION_C: f64 = 1.0;

/// Calibrated multiplier on the anti-concentration term of the composed
/// coupled deviation bound.
pub const DEVIATION_ANTICONC_C: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnticoncError {
    #[error("{0} summands exceed the exact enumeration limit of 30")]
    TooManyBits(usize),
    #[error("coefficients and thresholds must be finite")]
    NonFinite,
    #[error("radius must be finite and non-negative, got {0}")]
    BadRadius(f64),
    #[error("the operation needs at least one block")]
    Empty,
    #[error("the scaling fit needs at least two sizes")]
    TooFewSizes,
    #[error("central-mass sizes must be positive and even, got {0}")]
    OddSize(usize),
    #[error("the estimator needs at least {min} trials")]
    BadTrials { min: u64 },
    #[error("block {position} has length {got}, expected {expected}")]
    RaggedBlock { position: usize, got: usize, expected: usize },
    #[error("block norms must be non-increasing; position {position} grows")]
    UnsortedBlocks { position: usize },
    #[error("the summand magnitudes carry no variance")]
    ZeroVariance,
    #[error("{magnitudes} magnitudes for {n} summands")]
    LengthMismatch { n: usize, magnitudes: usize },
    #[error("coefficient vector of vertex {vertex} is owned by the wrong (side, vertex)")]
    OwnerMismatch { vertex: u32 },
    #[error("the halfspace still has critical blocks beyond the cap; truncate it first")]
    NotTruncated,
    #[error(
        "a decoding condition fires at u={} v={} r={} p={} j={} ({}); the coupled deviation \
         analysis does not apply",
        first.u, first.v, first.r, first.p, first.j,
        if *intersecting_tops { "projected top sets intersect" } else { "heavy shared preimage" }
    )]
    ConditionFires { first: ConditionWitness, intersecting_tops: bool },
    #[error(transparent)]
    Critical(#[from] CriticalError),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
}

fn subset_sums(a: &[f64], init: f64) -> Vec<f64> {
    let mut v = vec![init];
    for &ai in a {
        let mut w = Vec::with_capacity(v.len() * 2);
        for &s in &v {
            w.push(s);
            w.push(s + ai);
        }
        v = w;
    }
    v
}

/// Exact `Pr[|sum a_i x_i + theta| <= radius]` over uniform bits `x`, by
/// meet-in-the-middle enumeration. Limited to 30 summands.
pub fn lo_exact(a: &[f64], theta: f64, radius: f64) -> Result<f64, AnticoncError> {
    let n = a.len();
    if n > 30 {
        return Err(AnticoncError::TooManyBits(n));
    }
    if a.iter().any(|x| !x.is_finite()) || !theta.is_finite() {
        return Err(AnticoncError::NonFinite);
    }
    if !radius.is_finite() || radius < 0.0 {
        return Err(AnticoncError::BadRadius(radius));
    }
    let (left, right) = a.split_at(n / 2);
    let ls = subset_sums(left, theta);
    let mut rs = subset_sums(right, 0.0);
    rs.sort_by(f64::total_cmp);
    let mut count: u64 = 0;
    for &s in &ls {
        let lo = rs.partition_point(|&r| r < -radius - s);
        let hi = rs.partition_point(|&r| r <= radius - s);
        count += (hi - lo) as u64;
    }
    Ok(count as f64 / 2f64.powi(n as i32))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma((n + 1) as f64) - ln_gamma((k + 1) as f64) - ln_gamma((n - k + 1) as f64)
}

/// Exact central atom mass `Pr[S = n/2]` of a fair `n`-bit sum, even `n`.
fn central_mass(n: usize) -> f64 {
    (ln_choose(n as u64, n as u64 / 2) - n as f64 * std::f64::consts::LN_2).exp()
}

/// Least-squares slope of `ln y` against `ln x`; `None` without two usable
/// points or with a degenerate spread.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = csum(logs.iter().map(|p| p.0)) / n;
    let my = csum(logs.iter().map(|p| p.1)) / n;
    let sxy = csum(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    let sxx = csum(logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)));
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub exact: f64,
    pub mc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    pub slope: f64,
    pub slope_in_range: bool,
}

/// Exact central small-ball mass of unit-coefficient sums across sizes,
/// with the fitted log-log slope checked against the square-root decay
/// window `[-0.6, -0.4]`. `trials > 0` adds a Monte Carlo column.
pub fn lo_scaling_check(
    n_values: &[usize],
    trials: u64,
    seed: u64,
) -> Result<ScalingReport, AnticoncError> {
    if n_values.len() < 2 {
        return Err(AnticoncError::TooFewSizes);
    }
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n == 0 || n % 2 != 0 {
            return Err(AnticoncError::OddSize(n));
        }
        let exact = central_mass(n);
        let mc = (trials > 0).then(|| {
            let hits = mc_fold(
                trials,
                0u64,
                |index| {
                    let mut rng = stream_rng(seed.wrapping_add(n as u64), index);
                    let ones = (0..n).filter(|_| rng.random_bool(0.5)).count();
                    (ones == n / 2) as u64
                },
                |acc, h| acc + h,
            );
            hits as f64 / trials as f64
        });
        points.push(ScalingPoint { n, exact, mc });
    }
    let slope = fit_log_slope(
        &points.iter().map(|p| (p.n as f64, p.exact)).collect::<Vec<_>>(),
    )
    .expect("two positive points");
    let slope_in_range = (-0.6..=-0.4).contains(&slope);
    Ok(ScalingReport { points, slope, slope_in_range })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockLoReport {
    pub report: McReport,
    /// Window half-width `|c_T| / sqrt(T)` from the smallest block.
    pub radius: f64,
    /// Shift whose window captured the most mass.
    pub theta_star: f64,
}

/// Estimates `sup_theta Pr[|sum <c_i, X_i> + theta| <= radius]` for
/// independent uniform bit blocks `X_i`. The supremum over shifts of the
/// mass in a closed width-`2 radius` window is attained with the window's
/// left edge at an atom, so scanning left edges over the sampled values
/// gives the exact supremum of the empirical distribution. Blocks must
/// come sorted by non-increasing norm; the radius is pinned to the
/// smallest block's norm over `sqrt(T)`.
pub fn block_lo_mc(
    blocks: &[Vec<f64>],
    trials: u64,
    seed: u64,
) -> Result<BlockLoReport, AnticoncError> {
    if blocks.is_empty() {
        return Err(AnticoncError::Empty);
    }
    if trials == 0 {
        return Err(AnticoncError::BadTrials { min: 1 });
    }
    let q = blocks[0].len();
    let mut norms2 = Vec::with_capacity(blocks.len());
    for (position, b) in blocks.iter().enumerate() {
        if b.len() != q || q == 0 {
            return Err(AnticoncError::RaggedBlock { position, got: b.len(), expected: q });
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(AnticoncError::NonFinite);
        }
        norms2.push(csum(b.iter().map(|x| x * x)));
    }
    for position in 1..norms2.len() {
        if norms2[position] > norms2[position - 1] {
            return Err(AnticoncError::UnsortedBlocks { position });
        }
    }
    let t = blocks.len();
    let radius = norms2.last().unwrap().sqrt() / (t as f64).sqrt();

    let values = mc_fold(
        trials,
        Vec::with_capacity(trials as usize),
        |index| {
            let mut rng = stream_rng(seed, index);
            let mut s = CompensatedSum::new();
            for b in blocks {
                for &c in b {
                    if rng.random_bool(0.5) {
                        s.add(c);
                    }
                }
            }
            s.value()
        },
        |mut acc: Vec<f64>, v| {
            acc.push(v);
            acc
        },
    );
    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut best_count = 0u64;
    let mut best_left = sorted[0];
    for i in 0..n {
        if i > 0 && sorted[i] == sorted[i - 1] {
            continue;
        }
        let left = sorted[i];
        let hi = sorted.partition_point(|&v| v <= left + 2.0 * radius);
        let count = (hi - i) as u64;
        if count > best_count {
            best_count = count;
            best_left = left;
        }
    }
    let estimate = best_count as f64 / trials as f64;
    let report = McReport::new(estimate, wilson_ci(best_count, trials), seed, trials)
        .with_bound(BLOCK_LO_ENVELOPE_C / (t as f64).sqrt())
        .with_params(serde_json::json!({
            "blocks": t, "slots": q, "radius": radius,
        }));
    Ok(BlockLoReport { report, radius, theta_star: -(best_left + radius) })
}

/// Summand family for the central-limit gap probe: independent symmetric
/// two-point variables, rescaled internally to unit total variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AtomSpec {
    /// All summands share one magnitude.
    Uniform,
    /// Summand `i` takes values plus or minus `magnitudes[i]`.
    Magnitudes(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenReport {
    /// Largest distance between the sum's CDF and the standard normal,
    /// taken over both one-sided limits at every jump.
    pub gap: f64,
    /// Sum of normalized third absolute moments.
    pub gamma: f64,
    /// Whether the gap came from exact enumeration or sampling.
    pub exact: bool,
    pub trials: u64,
    /// Two-sided 99.9% empirical-CDF slack for the sampled path, zero when
    /// exact.
    pub dkw_slack: f64,
}

fn cdf_gap_at_atoms(atoms: &[(f64, f64)]) -> f64 {
    // Atoms sorted ascending with their masses; the CDF is flat between
    // jumps and the normal CDF is monotone, so the sup lives at jump limits.
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cum = CompensatedSum::new();
    let mut gap = 0.0f64;
    for &(x, mass) in atoms {
        let phi = normal.cdf(x);
        let below = cum.value();
        cum.add(mass);
        let above = cum.value();
        gap = gap.max((below - phi).abs()).max((above - phi).abs());
    }
    gap
}

/// Largest CDF distance between a normalized sum of independent symmetric
/// two-point summands and the standard normal, with the third-moment sum
/// `gamma`. Exact enumeration when the atom structure allows it (shared
/// magnitude, or at most 20 distinct summands); sampled otherwise.
pub fn berry_esseen_gap(
    spec: &AtomSpec,
    n: usize,
    trials: u64,
    seed: u64,
) -> Result<BerryEsseenReport, AnticoncError> {
    if n == 0 {
        return Err(AnticoncError::Empty);
    }
    let magnitudes: Vec<f64> = match spec {
        AtomSpec::Uniform => vec![1.0; n],
        AtomSpec::Magnitudes(m) => {
            if m.len() != n {
                return Err(AnticoncError::LengthMismatch { n, magnitudes: m.len() });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(AnticoncError::NonFinite);
            }
            m.clone()
        }
    };
    let var = csum(magnitudes.iter().map(|x| x * x));
    if var <= 0.0 {
        return Err(AnticoncError::ZeroVariance);
    }
    let scale = var.sqrt().recip();
    let a: Vec<f64> = magnitudes.iter().map(|x| x.abs() * scale).collect();
    let gamma = csum(a.iter().map(|x| x * x * x));

    let identical = a.iter().all(|&x| (x - a[0]).abs() <= 1e-15 * a[0].abs());
    if identical {
        // S = a (2 Bin(n, 1/2) - n); exact at any size via log binomials.
        let atoms: Vec<(f64, f64)> = (0..=n)
            .map(|s| {
                let x = a[0] * (2.0 * s as f64 - n as f64);
                let mass =
                    (ln_choose(n as u64, s as u64) - n as f64 * std::f64::consts::LN_2).exp();
                (x, mass)
            })
            .collect();
        return Ok(BerryEsseenReport {
            gap: cdf_gap_at_atoms(&atoms),
            gamma,
            exact: true,
            trials: 0,
            dkw_slack: 0.0,
        });
    }
    if n <= 20 {
        let offset = -csum(a.iter().copied());
        let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let mut sums = subset_sums(&doubled, offset);
        sums.sort_by(f64::total_cmp);
        let mass = 0.5f64.powi(n as i32);
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for &s in &sums {
            match atoms.last_mut() {
                Some(last) if last.0 == s => last.1 += mass,
                _ => atoms.push((s, mass)),
            }
        }
        return Ok(BerryEsseenReport {
            gap: cdf_gap_at_atoms(&atoms),
            gamma,
            exact: true,
            trials: 0,
            dkw_slack: 0.0,
        });
    }
    if trials == 0 {
        return Err(AnticoncError::BadTrials { min: 1 });
    }
    let mut samples = mc_fold(
        trials,
        Vec::with_capacity(trials as usize),
        |index| {
            let mut rng = stream_rng(seed, index);
            let mut s = CompensatedSum::new();
            for &ai in &a {
                s.add(if rng.random_bool(0.5) { ai } else { -ai });
            }
            s.value()
        },
        |mut acc: Vec<f64>, v| {
            acc.push(v);
            acc
        },
    );
    samples.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nn = samples.len() as f64;
    let mut gap = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let phi = normal.cdf(x);
        gap = gap.max((i as f64 / nn - phi).abs()).max(((i + 1) as f64 / nn - phi).abs());
    }
    let dkw_slack = ((2.0f64 / 0.001).ln() / (2.0 * nn)).sqrt();
    Ok(BerryEsseenReport { gap, gamma, exact: false, trials, dkw_slack })
}

/// Per-block noise rate of one vertex: the chance the noise lands on its
/// side while the vertex misses the eligibility subset.
pub fn block_noise_rate(zeta: f64, t: usize, k: usize, side: Side) -> f64 {
    let miss = 1.0 - t as f64 / k as f64;
    match side {
        Side::X => miss * zeta,
        Side::Y => miss * (1.0 - zeta),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyMassRow {
    pub vertex: u32,
    /// Fraction of draws whose noised residual mass fell strictly below the
    /// threshold.
    pub shortfall_freq: f64,
    pub ci95: [f64; 2],
    /// Per-block noise rate of this vertex.
    pub alpha: f64,
    /// Expected noised mass `alpha * total`.
    pub expectation: f64,
    /// Shortfall threshold `(zeta / 8) * total`.
    pub threshold: f64,
    /// Whether the expectation clears `(zeta / 4) * total`, the regime where
    /// shortfalls should effectively vanish.
    pub strong_regime: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyMassReport {
    pub rows: Vec<NoisyMassRow>,
    /// Concentration envelope `exp(-zeta^2 / (64 tau))`.
    pub bound: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Drives the fixed-edge distribution and measures, per vertex, how often
/// the coefficient mass landing in that draw's noised blocks falls short of
/// an eighth-of-`zeta` share of the vector's total. The passed vectors are
/// taken as the residual (regular) parts; `tau` only feeds the envelope.
pub fn noisy_mass_concentration(
    sampler: &GlobalSampler,
    edge: usize,
    resids: &BTreeMap<u32, BlockVector>,
    tau: f64,
    trials: u64,
    seed: u64,
) -> Result<NoisyMassReport, AnticoncError> {
    let inst = sampler.instance();
    let e = inst
        .edges
        .get(edge)
        .ok_or(CriticalError::EdgeOutOfRange(edge))?;
    if trials == 0 {
        return Err(AnticoncError::BadTrials { min: 1 });
    }
    let params = sampler.params();
    struct Target {
        vertex: u32,
        on_x: bool,
        by_small: Vec<f64>,
        threshold: f64,
        alpha: f64,
        total: f64,
    }
    let mut targets = Vec::with_capacity(resids.len());
    for (&vertex, c) in resids {
        let side = side_of(e, vertex)?;
        if c.owner() != (side, vertex) {
            return Err(AnticoncError::OwnerMismatch { vertex });
        }
        let mut by_small = vec![0.0f64; inst.small_labels as usize];
        for label in c.labels() {
            by_small[e.project(vertex, label) as usize] += c.norm2(label);
        }
        let total = csum(by_small.iter().copied());
        targets.push(Target {
            vertex,
            on_x: side == Side::X,
            by_small,
            threshold: params.zeta / 8.0 * total,
            alpha: block_noise_rate(params.zeta, params.t, params.k, side),
            total,
        });
    }

    let shortfalls = mc_fold(
        trials,
        vec![0u64; targets.len()],
        |index| {
            let p = sampler
                .sample_on_edge(edge, false, seed, index)
                .expect("edge index already validated");
            let blocks = match &p.transcript {
                Some(crate::point::Transcript::Global { blocks }) => blocks,
                _ => unreachable!("fixed-edge draws carry full transcripts"),
            };
            targets
                .iter()
                .map(|tg| {
                    let mut mass = CompensatedSum::new();
                    for (j, d) in blocks.iter().enumerate() {
                        let (noised_here, subset) =
                            if tg.on_x { (!d.b, &d.s_x) } else { (d.b, &d.s_y) };
                        if noised_here && subset.binary_search(&tg.vertex).is_err() {
                            mass.add(tg.by_small[j]);
                        }
                    }
                    mass.value() < tg.threshold
                })
                .collect::<Vec<bool>>()
        },
        |mut acc: Vec<u64>, row| {
            for (slot, short) in acc.iter_mut().zip(row) {
                *slot += short as u64;
            }
            acc
        },
    );

    let rows = targets
        .iter()
        .zip(&shortfalls)
        .map(|(tg, &misses)| NoisyMassRow {
            vertex: tg.vertex,
            shortfall_freq: misses as f64 / trials as f64,
            ci95: wilson_ci(misses, trials),
            alpha: tg.alpha,
            expectation: tg.alpha * tg.total,
            threshold: tg.threshold,
            strong_regime: tg.alpha * tg.total > params.zeta / 4.0 * tg.total,
        })
        .collect();
    Ok(NoisyMassReport {
        rows,
        bound: (-params.zeta * params.zeta / (64.0 * tau)).exp(),
        trials,
        seed,
    })
}

/// Preparatory checks shared by the coupled estimators: the halfspace must
/// already be truncation-stable on this edge, its influential label sets
/// must project without collision, and the capped critical labels become
/// the coupling's top cells per vertex.
struct CoupledSetup {
    top: BTreeMap<u32, Vec<u32>>,
    resid_mass: f64,
}

fn coupled_setup(
    sampler: &GlobalSampler,
    edge: usize,
    h: &Halfspace,
    tau: f64,
    cap: u64,
) -> Result<CoupledSetup, AnticoncError> {
    let inst = sampler.instance();
    let e = inst
        .edges
        .get(edge)
        .ok_or(CriticalError::EdgeOutOfRange(edge))?;
    let params = sampler.params();
    if truncate(h, e, tau, cap)?.coeffs != h.coeffs {
        return Err(AnticoncError::NotTruncated);
    }
    let mut l_sets: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut top: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut resid = CompensatedSum::new();
    for &v in &e.vids {
        let side = side_of(e, v)?;
        let c = BlockVector::from_halfspace(h, side, v, params.q)?;
        let pair = match side {
            Side::X => SidePair { x: c.clone(), y: BlockVector::new(Side::Y, v, params.q) },
            Side::Y => SidePair { x: BlockVector::new(Side::X, v, params.q), y: c.clone() },
        };
        let (_, l_v) = compute_iv_lv(std::slice::from_ref(&pair), tau, cap, params.d)?;
        l_sets.insert(v, l_v);
        let r = critical_index(&c, tau, cap)?;
        resid.add(r.residual_mass());
        if !r.c_tau_le_k.is_empty() {
            top.insert(v, r.c_tau_le_k.iter().copied().collect());
        }
    }
    let nice = crate::critical::niceness_check(inst, edge, &l_sets)?;
    if let Some((vertex, a, b)) = nice.witness {
        return Err(CriticalError::NotNice { vertex, a, b }.into());
    }
    Ok(CoupledSetup { top, resid_mass: resid.value() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDiffReport {
    /// Estimate is the sample variance of the coupled margin difference.
    pub report: McReport,
    pub mean: f64,
    pub mean_stderr: f64,
    /// Residual squared mass of the halfspace over the edge.
    pub resid_mass: f64,
}

/// Samples coupled (0-point, 1-point) draws sharing the halfspace's capped
/// critical cells and estimates the variance of the margin difference,
/// against the envelope `2 ||c_reg||^2 / sqrt(Q)`.
pub fn variance_diff_mc(
    sampler: &GlobalSampler,
    edge: usize,
    h: &Halfspace,
    tau: f64,
    cap: u64,
    trials: u64,
    seed: u64,
) -> Result<VarianceDiffReport, AnticoncError> {
    if trials < 2 {
        return Err(AnticoncError::BadTrials { min: 2 });
    }
    let setup = coupled_setup(sampler, edge, h, tau, cap)?;
    let paired = PairedSampler::new(sampler, edge, &setup.top)?;
    let sums = mc_fold(
        trials,
        (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new(),
         CompensatedSum::new()),
        |index| {
            let d = paired.sample(seed, index);
            h.margin(&d.one) - h.margin(&d.zero)
        },
        |mut acc, d| {
            acc.0.add(d);
            acc.1.add(d * d);
            acc.2.add(d * d * d);
            acc.3.add(d * d * d * d);
            acc
        },
    );
    let n = trials as f64;
    let mean = sums.0.value() / n;
    let m2 = (sums.1.value() / n - mean * mean).max(0.0);
    let var = m2 * n / (n - 1.0);
    let m3 = sums.2.value() / n - 3.0 * mean * sums.1.value() / n + 2.0 * mean.powi(3);
    let m4 = sums.3.value() / n - 4.0 * mean * sums.2.value() / n
        + 6.0 * mean * mean * sums.1.value() / n
        - 3.0 * mean.powi(4);
    let _ = m3;
    let var_stderr = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    let bound = 2.0 * setup.resid_mass / (sampler.params().q as f64).sqrt();
    let report = McReport::new(var, normal_ci(var, var_stderr), seed, trials)
        .with_scale_bound(bound)
        .with_params(serde_json::json!({
            "edge": edge, "tau": tau, "cap": cap, "q": sampler.params().q,
        }));
    Ok(VarianceDiffReport {
        report,
        mean,
        mean_stderr: (m2 / n).sqrt(),
        resid_mass: setup.resid_mass,
    })
}

/// Deviation probability tail implied by a variance bound at radius `eps`.
pub fn chebyshev_tail(variance_bound: f64, eps: f64) -> f64 {
    variance_bound / (eps * eps)
}

/// Composed envelope on the coupled sign-flip rate: a truncation term, a
/// noisy-mass term, and an anti-concentration term.
pub fn composed_deviation_bound(tau: f64, zeta: f64, k: usize, q: usize) -> f64 {
    DEVIATION_TRUNCATION_C * tau
        + 2.0 * k as f64 * (-zeta * zeta / (64.0 * tau)).exp()
        + DEVIATION_ANTICONC_C / (tau * tau * zeta * (q as f64).sqrt())
}

/// Estimates how often the halfspace classifies the two halves of a coupled
/// draw differently. Refuses when either decoding condition fires on the
/// halfspace's own coefficients, since the composed bound assumes neither.
pub fn pointwise_deviation_mc(
    sampler: &GlobalSampler,
    edge: usize,
    h: &Halfspace,
    tau: f64,
    cap: u64,
    trials: u64,
    seed: u64,
) -> Result<McReport, AnticoncError> {
    if trials == 0 {
        return Err(AnticoncError::BadTrials { min: 1 });
    }
    let setup = coupled_setup(sampler, edge, h, tau, cap)?;
    let inst = sampler.instance();
    let e = &inst.edges[edge];
    let params = sampler.params();
    let mut set = CoeffSet::new();
    for &v in &e.vids {
        let side = side_of(e, v)?;
        let c = BlockVector::from_halfspace(h, side, v, params.q)?;
        if c.is_empty() {
            continue;
        }
        let pair = match side {
            Side::X => SidePair { x: c, y: BlockVector::new(Side::Y, v, params.q) },
            Side::Y => SidePair { x: BlockVector::new(Side::X, v, params.q), y: c },
        };
        set.insert(v, pair);
    }
    let conditions = structural_conditions(inst, edge, std::slice::from_ref(&set), tau, cap)?;
    if let Some(&first) = conditions.condition_i.first() {
        return Err(AnticoncError::ConditionFires { first, intersecting_tops: true });
    }
    if let Some(&first) = conditions.condition_ii.first() {
        return Err(AnticoncError::ConditionFires { first, intersecting_tops: false });
    }

    let paired = PairedSampler::new(sampler, edge, &setup.top)?;
    let flips = mc_fold(
        trials,
        0u64,
        |index| {
            let d = paired.sample(seed, index);
            (h.classify(&d.one) != h.classify(&d.zero)) as u64
        },
        |acc, f| acc + f,
    );
    let estimate = flips as f64 / trials as f64;
    Ok(McReport::new(estimate, wilson_ci(flips, trials), seed, trials)
        .with_bound(composed_deviation_bound(tau, params.zeta, params.k, params.q))
        .with_params(serde_json::json!({
            "edge": edge, "tau": tau, "cap": cap,
            "resid_mass": setup.resid_mass,
        })))
}

//! Converts candidate halfspace coefficient vectors into a label cover
//! labeling and scores it: each vertex flips a fair coin between picking a
//! capped critical label uniformly and picking a residual label with
//! probability proportional to its squared mass, and the scored run reports
//! weak-satisfaction statistics against the expectation floor
//! `(nu/4) (1/16 l^2) min(1/K^2, tau^4/K)`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::{critical_index, BlockVector, CoeffSet, CriticalError};
use crate::labelcover::{LabelCoverInstance, Labeling};
use crate::rng::{mc_fold, stream_rng};
use crate::sum::CompensatedSum;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("at least one coefficient set is needed")]
    NoCoeffSets,
    #[error("scoring needs at least one repeat")]
    NoRepeats,
    #[error(transparent)]
    Critical(#[from] CriticalError),
}

/// Residual sampling table of one side of one vertex: labels past the
/// critical index with positive mass, their inclusive cumulative masses,
/// and the total.
struct SidePlan {
    labels: Vec<u32>,
    cum: Vec<f64>,
    total: f64,
}

impl SidePlan {
    fn empty() -> Self {
        SidePlan { labels: Vec::new(), cum: Vec::new(), total: 0.0 }
    }
}

fn side_plan(
    c: &BlockVector,
    tau: f64,
    cap: u64,
) -> Result<(BTreeSet<u32>, SidePlan), CriticalError> {
    let report = critical_index(c, tau, cap)?;
    let mut labels = Vec::new();
    let mut cum = Vec::new();
    let mut acc = CompensatedSum::new();
    for pos in report.i_tau - 1..report.ordering.len() {
        let mass = report.norms2[pos];
        if mass > 0.0 {
            acc.add(mass);
            labels.push(report.ordering[pos]);
            cum.push(acc.value());
        }
    }
    let total = cum.last().copied().unwrap_or(0.0);
    Ok((report.c_tau_le_k, SidePlan { labels, cum, total }))
}

/// One coefficient set's choices at one vertex: the capped-critical union
/// for the uniform branch and both sides' residual tables.
struct OptionPlan {
    union: Vec<u32>,
    x: SidePlan,
    y: SidePlan,
}

impl OptionPlan {
    fn absent() -> Self {
        OptionPlan { union: Vec::new(), x: SidePlan::empty(), y: SidePlan::empty() }
    }
}

struct VertexPlan {
    options: Vec<OptionPlan>,
}

fn build_plans(
    instance: &LabelCoverInstance,
    coeff_sets: &[CoeffSet],
    tau: f64,
    cap: u64,
) -> Result<Vec<VertexPlan>, DecodeError> {
    if coeff_sets.is_empty() {
        return Err(DecodeError::NoCoeffSets);
    }
    let mut plans = Vec::with_capacity(instance.vertices as usize);
    for v in 0..instance.vertices {
        let mut options = Vec::with_capacity(coeff_sets.len());
        for set in coeff_sets {
            match set.get(&v) {
                Some(pair) => {
                    let (top_x, x) = side_plan(&pair.x, tau, cap)?;
                    let (top_y, y) = side_plan(&pair.y, tau, cap)?;
                    let union: Vec<u32> = top_x.union(&top_y).copied().collect();
                    options.push(OptionPlan { union, x, y });
                }
                None => options.push(OptionPlan::absent()),
            }
        }
        plans.push(VertexPlan { options });
    }
    Ok(plans)
}

fn draw_label<R: Rng>(plan: &VertexPlan, big_labels: u32, rng: &mut R) -> u32 {
    let s = rng.random_range(0..plan.options.len());
    let opt = &plan.options[s];
    let take_union = rng.random_bool(0.5);
    if take_union && !opt.union.is_empty() {
        return opt.union[rng.random_range(0..opt.union.len())];
    }
    // An empty union falls through to the residual branch; an empty
    // residual falls through to a uniform label. The coins are always
    // spent so the branch probabilities stay put wherever mass exists.
    let side = if rng.random_bool(0.5) { &opt.x } else { &opt.y };
    if side.total > 0.0 {
        let u = rng.random_range(0.0..side.total);
        return side.labels[side.cum.partition_point(|&c| c <= u)];
    }
    rng.random_range(0..big_labels)
}

fn label_with<R: Rng>(
    plans: &[VertexPlan],
    big_labels: u32,
    rng: &mut R,
) -> Labeling {
    Labeling(
        plans
            .iter()
            .enumerate()
            .map(|(v, plan)| (v as u32, draw_label(plan, big_labels, rng)))
            .collect(),
    )
}

/// Labels every vertex of the instance from its coefficient sets: pick one
/// of the sets uniformly, then with probability 1/2 a uniform label from
/// the capped critical union of its two side vectors, otherwise a residual
/// label of a fair-coin side proportional to squared mass. Vertices with no
/// usable mass get uniform labels, so the output is always total.
pub fn randomized_labeling<R: Rng>(
    instance: &LabelCoverInstance,
    coeff_sets: &[CoeffSet],
    tau: f64,
    cap: u64,
    rng: &mut R,
) -> Result<Labeling, DecodeError> {
    let plans = build_plans(instance, coeff_sets, tau, cap)?;
    Ok(label_with(&plans, instance.big_labels, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeScore {
    pub mean_weak_frac: f64,
    pub best_weak_frac: f64,
    /// Expectation floor `(nu/4) (1/16 l^2) min(1/K^2, tau^4/K)`.
    pub bound: f64,
    /// A lower bound outside `(0, 1]` says nothing about a fraction.
    pub bound_vacuous: bool,
    pub repeats: u64,
    pub seed: u64,
}

/// Runs the randomized labeling `repeats` times with independent streams
/// and scores each against the instance, reporting the mean and best weak
/// fractions next to the expectation floor at these parameters.
pub fn decode_and_score(
    instance: &LabelCoverInstance,
    coeff_sets: &[CoeffSet],
    tau: f64,
    cap: u64,
    nu: f64,
    repeats: u64,
    seed: u64,
) -> Result<DecodeScore, DecodeError> {
    if repeats == 0 {
        return Err(DecodeError::NoRepeats);
    }
    let plans = build_plans(instance, coeff_sets, tau, cap)?;
    let ell = coeff_sets.len() as f64;
    let kf = cap as f64;
    let bound = nu / 4.0 / (16.0 * ell * ell) * (1.0 / (kf * kf)).min(tau.powi(4) / kf);
    let (sum, best) = mc_fold(
        repeats,
        (CompensatedSum::new(), 0.0f64),
        |r| {
            let mut rng = stream_rng(seed, r);
            let labeling = label_with(&plans, instance.big_labels, &mut rng);
            instance
                .evaluate_labeling(&labeling)
                .expect("labeling is total and in range")
                .weak_frac
        },
        |(mut s, b), w| {
            s.add(w);
            (s, b.max(w))
        },
    );
    Ok(DecodeScore {
        mean_weak_frac: sum.value() / repeats as f64,
        best_weak_frac: best,
        bound,
        bound_vacuous: !(bound > 0.0 && bound <= 1.0),
        repeats,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::SidePair;
    use crate::labelcover::{build_planted, InstanceConfig};
    use crate::point::Side;

    fn planted_fixture() -> (LabelCoverInstance, Labeling) {
        let cfg = InstanceConfig {
            vertices: 8,
            edges: 4,
            k: 2,
            big_labels: 8,
            small_labels: 8,
            d: 2,
        };
        build_planted(cfg, 17).unwrap()
    }

    fn dictator_sets(inst: &LabelCoverInstance, lab: &Labeling) -> Vec<CoeffSet> {
        // Unit mass at the planted label on both sides, since a vertex can
        // sit on either side depending on the edge.
        let mut set = CoeffSet::new();
        for v in 0..inst.vertices {
            let mut x = BlockVector::new(Side::X, v, 1);
            x.insert_block(lab.0[&v], vec![1.0]).unwrap();
            let mut y = BlockVector::new(Side::Y, v, 1);
            y.insert_block(lab.0[&v], vec![1.0]).unwrap();
            set.insert(v, SidePair { x, y });
        }
        vec![set]
    }

    #[test]
    fn dictator_coefficients_beat_the_quarter_floor() {
        let (inst, lab) = planted_fixture();
        let sets = dictator_sets(&inst, &lab);
        let score = decode_and_score(&inst, &sets, 0.3, 2, 0.1, 10_000, 61).unwrap();
        // Any strongly satisfied edge has a vertex pair that both land on
        // their planted labels with probability at least 1/2 * 1/2.
        assert!(score.mean_weak_frac >= 0.25, "mean {}", score.mean_weak_frac);
        assert!(score.best_weak_frac >= score.mean_weak_frac);
        let want_bound = 0.1 / 4.0 / 16.0 * (0.25f64).min(0.3f64.powi(4) / 2.0);
        assert!((score.bound - want_bound).abs() < 1e-18);
        assert!(!score.bound_vacuous);
        assert!(score.mean_weak_frac >= score.bound);
        let again = decode_and_score(&inst, &sets, 0.3, 2, 0.1, 10_000, 61).unwrap();
        assert_eq!(score, again);
    }

    #[test]
    fn zero_signal_matches_the_uniform_baseline() {
        let (inst, _) = planted_fixture();
        let sets = vec![CoeffSet::new()];
        let repeats = 4000u64;
        let score = decode_and_score(&inst, &sets, 0.3, 2, 0.1, repeats, 71).unwrap();
        let baseline = mc_fold(
            repeats,
            CompensatedSum::new(),
            |r| {
                let mut rng = stream_rng(72, r);
                let lab = Labeling(
                    (0..inst.vertices)
                        .map(|v| (v, rng.random_range(0..inst.big_labels)))
                        .collect(),
                );
                inst.evaluate_labeling(&lab).unwrap().weak_frac
            },
            |mut acc, w| {
                acc.add(w);
                acc
            },
        )
        .value()
            / repeats as f64;
        // Per-labeling weak fractions live on multiples of 1/4, so their
        // standard deviation is below 1/2; four combined standard errors.
        let tol = 4.0 * (2.0f64 * 0.25 / repeats as f64).sqrt();
        assert!(
            (score.mean_weak_frac - baseline).abs() < tol,
            "{} vs {baseline}",
            score.mean_weak_frac
        );
    }

    #[test]
    fn matched_top_labels_clear_the_pairing_floor() {
        let cfg = InstanceConfig {
            vertices: 4,
            edges: 1,
            k: 2,
            big_labels: 8,
            small_labels: 8,
            d: 2,
        };
        let (inst, lab) = build_planted(cfg, 23).unwrap();
        let e = &inst.edges[0];
        let (u, w) = (e.ex[0], e.ey[0]);
        // Dictators at two vertices of the one edge, on the sides the edge
        // actually gives them; the other two vertices stay unlabeled by the
        // sets and fall back to uniform labels.
        let mut set = CoeffSet::new();
        let mut cu = BlockVector::new(Side::X, u, 1);
        cu.insert_block(lab.0[&u], vec![1.0]).unwrap();
        set.insert(u, SidePair { x: cu, y: BlockVector::new(Side::Y, u, 1) });
        let mut cw = BlockVector::new(Side::Y, w, 1);
        cw.insert_block(lab.0[&w], vec![1.0]).unwrap();
        set.insert(w, SidePair { x: BlockVector::new(Side::X, w, 1), y: cw });
        let sets = vec![set];
        let draws = 4000u64;
        let mut agree = 0u64;
        for r in 0..draws {
            let mut rng = stream_rng(400 + r, 0);
            let sigma = randomized_labeling(&inst, &sets, 0.3, 1, &mut rng).unwrap();
            agree += (e.project(u, sigma.0[&u]) == e.project(w, sigma.0[&w])) as u64;
        }
        let freq = agree as f64 / draws as f64;
        // Both picking their singleton capped sets happens with chance 1/4,
        // which already clears the 1/(16 K^2 l^2) floor at K = l = 1.
        assert!(freq >= 1.0 / 16.0 + 0.02, "agreement {freq}");
    }

    #[test]
    fn labelings_are_total_in_range_and_deterministic() {
        let (inst, lab) = planted_fixture();
        let sets = dictator_sets(&inst, &lab);
        let mut rng = stream_rng(88, 0);
        let a = randomized_labeling(&inst, &sets, 0.3, 2, &mut rng).unwrap();
        assert_eq!(a.0.len(), inst.vertices as usize);
        for v in 0..inst.vertices {
            assert!(a.0[&v] < inst.big_labels);
        }
        let mut rng = stream_rng(88, 0);
        let b = randomized_labeling(&inst, &sets, 0.3, 2, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    fn mixed_plan_set(v: u32) -> Vec<CoeffSet> {
        // X side: two heavy labels then a five-label regular tail; Y side a
        // single dominant label. Union {0, 1, 4}, X residual {2..6}.
        let mut x = BlockVector::new(Side::X, v, 1);
        x.insert_block(0, vec![2.0]).unwrap();
        x.insert_block(1, vec![2.0]).unwrap();
        for label in 2..=6u32 {
            x.insert_block(label, vec![0.5]).unwrap();
        }
        let mut y = BlockVector::new(Side::Y, v, 1);
        y.insert_block(4, vec![3.0]).unwrap();
        let mut set = CoeffSet::new();
        set.insert(v, SidePair { x, y });
        vec![set]
    }

    fn scaled(sets: &[CoeffSet], factor: f64) -> Vec<CoeffSet> {
        sets.iter()
            .map(|set| {
                set.iter()
                    .map(|(&v, pair)| {
                        let mut out = SidePair {
                            x: BlockVector::new(Side::X, v, pair.x.q()),
                            y: BlockVector::new(Side::Y, v, pair.y.q()),
                        };
                        for label in pair.x.labels() {
                            let b: Vec<f64> =
                                pair.x.block(label).unwrap().iter().map(|c| c * factor).collect();
                            out.x.insert_block(label, b).unwrap();
                        }
                        for label in pair.y.labels() {
                            let b: Vec<f64> =
                                pair.y.block(label).unwrap().iter().map(|c| c * factor).collect();
                            out.y.insert_block(label, b).unwrap();
                        }
                        (v, out)
                    })
                    .collect()
            })
            .collect()
    }

    fn label_frequencies(
        inst: &LabelCoverInstance,
        sets: &[CoeffSet],
        v: u32,
        draws: u64,
        seed: u64,
    ) -> Vec<u64> {
        let mut counts = vec![0u64; inst.big_labels as usize];
        for r in 0..draws {
            let mut rng = stream_rng(seed, r);
            let sigma = randomized_labeling(inst, sets, 0.3, 2, &mut rng).unwrap();
            counts[sigma.0[&v] as usize] += 1;
        }
        counts
    }

    #[test]
    fn scaling_coefficients_preserves_the_label_law() {
        let (inst, _) = planted_fixture();
        let sets = mixed_plan_set(0);
        let big = scaled(&sets, 1.9);
        let draws = 10_000u64;
        let a = label_frequencies(&inst, &sets, 0, draws, 301);
        let b = label_frequencies(&inst, &big, 0, draws, 302);
        let mut chi2 = 0.0;
        for (&oa, &ob) in a.iter().zip(&b) {
            if oa + ob > 0 {
                let d = oa as f64 - ob as f64;
                chi2 += d * d / (oa + ob) as f64;
            }
        }
        // 99.9th percentile of chi-square with 7 degrees of freedom.
        assert!(chi2 < 24.32, "chi2 {chi2}, counts {a:?} vs {b:?}");
    }

    #[test]
    fn empty_union_falls_through_to_residual_sampling() {
        let (inst, _) = planted_fixture();
        // A regular vector: the critical set is empty, so the union branch
        // always falls through and only residual or fallback draws remain.
        let mut x = BlockVector::new(Side::X, 0, 1);
        x.insert_block(2, vec![0.75f64.sqrt()]).unwrap();
        x.insert_block(3, vec![0.25f64.sqrt()]).unwrap();
        let mut set = CoeffSet::new();
        set.insert(0, SidePair { x, y: BlockVector::new(Side::Y, 0, 1) });
        let sets = vec![set];
        let report = critical_index(&sets[0][&0].x, 0.8, 2).unwrap();
        assert!(report.c_tau.is_empty(), "fixture must be regular");

        let draws = 4000u64;
        let mut counts = vec![0u64; inst.big_labels as usize];
        for r in 0..draws {
            let mut rng = stream_rng(501, r);
            let sigma = randomized_labeling(&inst, &sets, 0.8, 2, &mut rng).unwrap();
            counts[sigma.0[&0] as usize] += 1;
        }
        // Half the draws take the X residual (3/4 on label 2), half the
        // empty Y side and fall back to uniform over the eight labels.
        let want2 = 0.5 * 0.75 + 1.0 / 16.0;
        let got2 = counts[2] as f64 / draws as f64;
        let se = (want2 * (1.0 - want2) / draws as f64).sqrt();
        assert!((got2 - want2).abs() < 4.0 * se, "{got2} vs {want2}");
        let want7 = 1.0 / 16.0;
        let got7 = counts[7] as f64 / draws as f64;
        let se7 = (want7 * (1.0 - want7) / draws as f64).sqrt();
        assert!((got7 - want7).abs() < 4.0 * se7, "{got7} vs {want7}");
    }

    #[test]
    fn degenerate_inputs_error() {
        let (inst, lab) = planted_fixture();
        let sets = dictator_sets(&inst, &lab);
        assert_eq!(
            decode_and_score(&inst, &sets, 0.3, 2, 0.1, 0, 0).unwrap_err(),
            DecodeError::NoRepeats
        );
        assert_eq!(
            decode_and_score(&inst, &[], 0.3, 2, 0.1, 10, 0).unwrap_err(),
            DecodeError::NoCoeffSets
        );
        let mut rng = stream_rng(0, 0);
        assert_eq!(
            randomized_labeling(&inst, &sets, 1.5, 2, &mut rng).unwrap_err(),
            DecodeError::Critical(CriticalError::BadTau(1.5))
        );
    }
}

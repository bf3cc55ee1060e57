//! Exact population quantities on a [`FiniteDistribution`].

use serde::Serialize;

use crate::dataset::FiniteDistribution;
use crate::error::Result;
use crate::utilities::{UtilityEvaluation, UtilitySpec};

use super::worst_interval;

const SLACK: f64 = 1e-12;

fn evaluations(dist: &FiniteDistribution, spec: &UtilitySpec) -> Result<Vec<UtilityEvaluation>> {
    dist.support.iter().map(|p| spec.eval(p)).collect()
}

/// Per support point: `(v_s, pi_s * <q_s - p_s, ū(p_s)>)`.
pub fn population_terms(dist: &FiniteDistribution, spec: &UtilitySpec) -> Result<Vec<(f64, f64)>> {
    let evals = evaluations(dist, spec)?;
    Ok(evals
        .iter()
        .zip(&dist.cond_label)
        .zip(&dist.weights)
        .map(|((e, q), &w)| {
            let realized: f64 = q.iter().zip(&e.uvec).map(|(a, b)| a * b).sum();
            (e.v, w * (realized - e.v))
        })
        .collect())
}

/// Population utility calibration error: the worst closed interval of
/// predicted utility, weighted by the support probabilities.
pub fn population_uc(dist: &FiniteDistribution, spec: &UtilitySpec) -> Result<f64> {
    Ok(worst_interval(population_terms(dist, spec)?, 1.0).value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskGapCheck {
    /// Risk of acting when `v_u >= t0`.
    pub risk_v: f64,
    /// Smallest risk over all threshold rules on `v_u`.
    pub risk_best_monotone: f64,
    pub uc: f64,
    pub holds: bool,
}

/// Compares the thresholded decision `1{v_u >= t0}` against every monotone
/// post-processing of `v_u`, under the loss `|u_Y - t0|` charged when the
/// decision disagrees with `1{u_Y >= t0}`.
///
/// On a finite support, `1{h(v) >= t0}` for non-decreasing `h` is an upper
/// set of the observed `v` values, i.e. `1{v >= s}` or `1{v > s}` with `s`
/// ranging over the support values and the two infinities.
pub fn risk_gap_check(dist: &FiniteDistribution, spec: &UtilitySpec, t0: f64) -> Result<RiskGapCheck> {
    let evals = evaluations(dist, spec)?;
    let risk = |act: &dyn Fn(f64) -> bool| -> f64 {
        let mut total = 0.0;
        for ((e, q), &w) in evals.iter().zip(&dist.cond_label).zip(&dist.weights) {
            let decision = act(e.v);
            for (&u, &qj) in e.uvec.iter().zip(q) {
                if decision != (u >= t0) {
                    total += w * qj * (u - t0).abs();
                }
            }
        }
        total
    };

    let risk_v = risk(&|v| v >= t0);
    let mut thresholds: Vec<f64> = evals.iter().map(|e| e.v).collect();
    thresholds.extend([f64::NEG_INFINITY, f64::INFINITY]);
    let mut best = f64::INFINITY;
    for &s in &thresholds {
        best = best.min(risk(&|v| v >= s)).min(risk(&|v| v > s));
    }
    let uc = population_uc(dist, spec)?;
    Ok(RiskGapCheck {
        risk_v,
        risk_best_monotone: best,
        uc,
        holds: risk_v - best <= 2.0 * uc + SLACK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DcuCheck {
    pub uc: f64,
    /// Bin width `sqrt(2 UC)`; zero when `UC = 0`.
    pub width: f64,
    /// `E|g_W - v_u|` for the binned conditional-mean predictor `g_W`.
    pub dcu_upper: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Builds the calibrated predictor `g_W = E[u_Y | bin of v_u]` on bins of
/// width `W = sqrt(2 UC)` covering `[-1, 1]`, and checks
/// `E|g_W - v_u| <= 2 sqrt(2 UC) + UC`.
pub fn dcu_bound_check(dist: &FiniteDistribution, spec: &UtilitySpec) -> Result<DcuCheck> {
    let uc = population_uc(dist, spec)?;
    if uc <= 0.0 {
        return Ok(DcuCheck { uc, width: 0.0, dcu_upper: 0.0, bound: 0.0, holds: true });
    }
    let width = (2.0 * uc).sqrt();
    let bins = (2.0 / width).ceil() as usize;
    let bin_of = |z: f64| (((z + 1.0) / width).floor().max(0.0) as usize).min(bins - 1);

    let evals = evaluations(dist, spec)?;
    let mut mass = vec![0.0; bins];
    let mut utility = vec![0.0; bins];
    for ((e, q), &w) in evals.iter().zip(&dist.cond_label).zip(&dist.weights) {
        let b = bin_of(e.v);
        mass[b] += w;
        utility[b] += w * q.iter().zip(&e.uvec).map(|(a, b)| a * b).sum::<f64>();
    }
    let dcu_upper: f64 = evals
        .iter()
        .zip(&dist.weights)
        .map(|(e, &w)| {
            let b = bin_of(e.v);
            w * (utility[b] / mass[b] - e.v).abs()
        })
        .sum();
    let bound = 2.0 * width + uc;
    Ok(DcuCheck { uc, width, dcu_upper, bound, holds: dcu_upper <= bound + SLACK })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{random_population, two_point_population};
    use crate::numeric::stream_rng;
    use crate::utilities::{sample_any, UtilitySpec};
    use rand::Rng;

    /// Enumerates every pair of support values as interval endpoints.
    fn brute_population_uc(dist: &FiniteDistribution, spec: &UtilitySpec) -> f64 {
        let terms = population_terms(dist, spec).unwrap();
        let mut best = 0.0_f64;
        for &(lo, _) in &terms {
            for &(hi, _) in &terms {
                if lo > hi {
                    continue;
                }
                let s: f64 = terms.iter().filter(|(v, _)| *v >= lo && *v <= hi).map(|(_, r)| r).sum();
                best = best.max(s.abs());
            }
        }
        best
    }

    #[test]
    fn two_point_population_uc() {
        let d = two_point_population();
        let uc = population_uc(&d, &UtilitySpec::TopClass {}).unwrap();
        assert!((uc - 0.2).abs() < 1e-12);

        let r = risk_gap_check(&d, &UtilitySpec::TopClass {}, 0.5).unwrap();
        assert!(r.holds, "{r:?}");

        let c = dcu_bound_check(&d, &UtilitySpec::TopClass {}).unwrap();
        assert!((c.bound - (2.0 * 0.4_f64.sqrt() + 0.2)).abs() < 1e-12);
        assert!((c.bound - 1.4649).abs() < 1e-4);
        assert!(c.holds, "{c:?}");
    }

    #[test]
    fn calibrated_population_has_zero_error() {
        let mut rng = stream_rng(31, 0, 0);
        for _ in 0..50 {
            let mut d = random_population(4, 5, &mut rng);
            d.cond_label = d.support.clone();
            let spec = sample_any(4, &mut rng);
            let uc = population_uc(&d, &spec).unwrap();
            assert!(uc < 1e-12, "{uc}");
            let t0 = rng.gen_range(-1.0..=1.0);
            let r = risk_gap_check(&d, &spec, t0).unwrap();
            assert!(r.risk_v - r.risk_best_monotone <= 1e-12 + 2.0 * uc);
            let c = dcu_bound_check(&d, &spec).unwrap();
            assert!(c.holds);
        }
    }

    #[test]
    fn population_uc_matches_enumeration() {
        let mut rng = stream_rng(32, 0, 0);
        for _ in 0..300 {
            let d = random_population(4, rng.gen_range(1..=5), &mut rng);
            let spec = sample_any(4, &mut rng);
            let fast = population_uc(&d, &spec).unwrap();
            let slow = brute_population_uc(&d, &spec);
            assert!((fast - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn propositions_hold_on_random_populations() {
        let mut rng = stream_rng(33, 0, 0);
        for _ in 0..200 {
            let c = rng.gen_range(2..=5);
            let d = random_population(c, rng.gen_range(1..=6), &mut rng);
            let spec = sample_any(c, &mut rng);
            let t0 = rng.gen_range(-1.0..=1.0);
            assert!(risk_gap_check(&d, &spec, t0).unwrap().holds);
            assert!(dcu_bound_check(&d, &spec).unwrap().holds);
        }
    }
}

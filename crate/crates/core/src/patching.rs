//! Iterative patching: repeatedly find the worst calibration witness over a
//! utility pool and correct it with a masked, simplex-projected update.
//!
//! A witness is `p -> sign * ū(p) * 1{v_u(p) in [lo, hi]}`. Its violation on
//! a sample is `err = mean(sign * <p_i - e_{y_i}, ū(p_i)>)` over rows in the
//! interval, which is the worst-interval estimate with the residual sign
//! flipped (the residual is `ū(p)[y] - v_u(p) = <e_y - p, ū(p)>`). Each patch
//! moves the masked rows along `-step * sign * ū(p)` and projects back onto
//! the simplex, which lowers the Brier score by at least `err^2 / C` with the
//! step `err / C`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPredictions;
use crate::error::{Error, Result};
use crate::estimators::{brier, uc_hat_many};
use crate::numeric::{derive_seed, exact_sum, tags};
use crate::utilities::{comb_pool, Family, UtilitySpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &xk) in sorted.iter().enumerate() {
        cumsum += xk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if xk - t > 0.0 {
            tau = t;
        }
    }
    x.iter().map(|&xi| (xi - tau).max(0.0)).collect()
}

/// One correction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub spec: UtilitySpec,
    pub lo: f64,
    pub hi: f64,
    /// Witness sign: the update is `p - step * sign * ū(p)`.
    pub sign: i8,
    pub step: f64,
}

/// A witness before a step size is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub spec: UtilitySpec,
    pub lo: f64,
    pub hi: f64,
    pub sign: i8,
}

impl Witness {
    pub fn with_step(self, step: f64) -> PatchRecord {
        PatchRecord { spec: self.spec, lo: self.lo, hi: self.hi, sign: self.sign, step }
    }
}

/// Worst witness over `pool` and its violation. Ties go to the earliest
/// pool entry.
pub fn find_worst_witness(preds: &LabeledPredictions, pool: &[UtilitySpec]) -> Result<(Witness, f64)> {
    if pool.is_empty() {
        return Err(Error::Config("utility pool is empty".into()));
    }
    let estimates = uc_hat_many(preds, pool)?;
    let mut best = 0;
    for (i, e) in estimates.iter().enumerate() {
        if e.value > estimates[best].value {
            best = i;
        }
    }
    let e = estimates[best];
    let witness = Witness { spec: pool[best].clone(), lo: e.lo, hi: e.hi, sign: -e.sign };
    Ok((witness, e.value))
}

/// Applies one patch to a probability vector; rows whose predicted utility
/// falls outside the closed witness interval are returned unchanged.
pub fn apply_patch(p: &[f64], rec: &PatchRecord) -> Result<Vec<f64>> {
    let mut uvec = vec![0.0; p.len()];
    let mut out = p.to_vec();
    apply_patch_into(&mut out, rec, &mut uvec)?;
    Ok(out)
}

/// In-place variant of [`apply_patch`]; `uvec` is scratch space of length C.
/// Returns whether the row was inside the witness interval.
fn apply_patch_into(p: &mut [f64], rec: &PatchRecord, uvec: &mut [f64]) -> Result<bool> {
    let v = rec.spec.eval_into(p, uvec)?;
    if !(rec.lo <= v && v <= rec.hi) {
        return Ok(false);
    }
    if rec.step == 0.0 {
        return Ok(true);
    }
    let scale = rec.step * f64::from(rec.sign);
    let moved: Vec<f64> = p.iter().zip(uvec.iter()).map(|(x, u)| x - scale * u).collect();
    p.copy_from_slice(&project_simplex(&moved));
    Ok(true)
}

fn apply_to_matrix(probs: &mut [f64], classes: usize, rec: &PatchRecord) -> Result<()> {
    probs
        .par_chunks_mut(classes)
        .map_init(|| vec![0.0; classes], |uvec, row| apply_patch_into(row, rec, uvec).map(|_| ()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// `step = err / C`.
    Theoretical,
    /// Backtracking from `init_scale * err / mean ||ū||^2` (mean over the
    /// masked rows) until the Brier score drops by `c * step * err`; falls
    /// back to `err / C` after `max_backtracks` halvings.
    Armijo {
        init_scale: f64,
        shrink: f64,
        c: f64,
        max_backtracks: u32,
    },
}

impl StepRule {
    pub fn armijo() -> Self {
        StepRule::Armijo { init_scale: 1.0, shrink: 0.5, c: 0.5, max_backtracks: 30 }
    }
}

/// Extra utilities sampled fresh at every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    pub families: Vec<Family>,
    pub count: usize,
    pub seed: u64,
}

impl Augment {
    pub const DEFAULT_COUNT: usize = 264;

    fn sample(&self, iteration: usize, classes: usize) -> Vec<UtilitySpec> {
        (0..self.count)
            .map(|k| {
                let family = self.families[k % self.families.len()];
                let index = ((iteration as u64) << 32) | k as u64;
                family.sample(classes, &mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, tags::AUGMENT, index)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub pool: Vec<UtilitySpec>,
    pub augment: Option<Augment>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub step_rule: StepRule,
}

impl PatchConfig {
    /// Class-wise plus top-K pool, theoretical steps.
    pub fn new(classes: usize, epsilon: f64) -> Self {
        Self {
            pool: comb_pool(classes),
            augment: None,
            epsilon,
            max_iters: 10_000,
            step_rule: StepRule::Theoretical,
        }
    }

    fn check(&self, classes: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.pool.is_empty() && self.augment.as_ref().is_none_or(|a| a.count == 0) {
            return Err(Error::Config("utility pool is empty".into()));
        }
        if let Some(a) = &self.augment {
            if a.families.is_empty() && a.count > 0 {
                return Err(Error::Config("augmentation needs at least one family".into()));
            }
        }
        if let StepRule::Armijo { init_scale, shrink, c, .. } = self.step_rule {
            if !(init_scale > 0.0 && shrink > 0.0 && shrink < 1.0 && c > 0.0 && c <= 1.0) {
                return Err(Error::Config("armijo needs init_scale > 0, shrink in (0,1), c in (0,1]".into()));
            }
        }
        for s in &self.pool {
            s.check(classes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub err: f64,
    pub brier_before: f64,
    pub brier_after: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSequence {
    #[serde(rename = "C")]
    pub classes: usize,
    pub records: Vec<PatchRecord>,
    #[serde(default)]
    pub history: Vec<IterationLog>,
    /// Violation of the worst witness when the loop stopped.
    #[serde(default)]
    pub final_err: f64,
}

impl PatchSequence {
    pub fn empty(classes: usize) -> Self {
        Self { classes, records: Vec::new(), history: Vec::new(), final_err: 0.0 }
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.classes {
            return Err(Error::domain(format!("vector has {} classes, patches expect {}", p.len(), self.classes)));
        }
        let mut out = p.to_vec();
        let mut uvec = vec![0.0; self.classes];
        for rec in &self.records {
            apply_patch_into(&mut out, rec, &mut uvec)?;
        }
        Ok(out)
    }
}

/// Runs the patching loop on the calibration set.
pub fn fit(cal: &LabeledPredictions, config: &PatchConfig) -> Result<PatchSequence> {
    fit_with_predictions(cal, config).map(|(seq, _)| seq)
}

/// [`fit`], also returning the patched calibration predictions.
pub fn fit_with_predictions(
    cal: &LabeledPredictions,
    config: &PatchConfig,
) -> Result<(PatchSequence, LabeledPredictions)> {
    let classes = cal.classes();
    config.check(classes)?;
    let mut current = cal.clone();
    let mut seq = PatchSequence::empty(classes);

    for iteration in 0.. {
        let pool: Vec<UtilitySpec> = match &config.augment {
            Some(aug) => config.pool.iter().cloned().chain(aug.sample(iteration, classes)).collect(),
            None => config.pool.clone(),
        };
        let (witness, err) = find_worst_witness(&current, &pool)?;
        seq.final_err = err;
        if err <= config.epsilon || iteration == config.max_iters {
            break;
        }
        let brier_before = brier(&current);
        let (rec, next) = match config.step_rule {
            StepRule::Theoretical => {
                let rec = witness.with_step(err / classes as f64);
                let next = patched(&current, &rec)?;
                (rec, next)
            }
            StepRule::Armijo { init_scale, shrink, c, max_backtracks } => {
                armijo_step(&current, witness, err, brier_before, init_scale, shrink, c, max_backtracks)?
            }
        };
        let brier_after = brier(&next);
        seq.history.push(IterationLog { iteration, err, brier_before, brier_after, step: rec.step });
        seq.records.push(rec);
        current = next;
    }
    Ok((seq, current))
}

fn patched(preds: &LabeledPredictions, rec: &PatchRecord) -> Result<LabeledPredictions> {
    let mut probs = preds.probs().to_vec();
    apply_to_matrix(&mut probs, preds.classes(), rec)?;
    preds.with_probs(probs)
}

#[allow(clippy::too_many_arguments)]
fn armijo_step(
    current: &LabeledPredictions,
    witness: Witness,
    err: f64,
    brier_before: f64,
    init_scale: f64,
    shrink: f64,
    c: f64,
    max_backtracks: u32,
) -> Result<(PatchRecord, LabeledPredictions)> {
    let classes = current.classes();
    let mut uvec = vec![0.0; classes];
    let mut masked = 0usize;
    let mut norms = Vec::new();
    for p in current.rows() {
        let v = witness.spec.eval_into(p, &mut uvec)?;
        if witness.lo <= v && v <= witness.hi {
            masked += 1;
            norms.push(uvec.iter().map(|u| u * u).sum::<f64>());
        }
    }
    let mean_norm = exact_sum(norms) / masked.max(1) as f64;
    let mut step = if mean_norm > 0.0 { (init_scale * err / mean_norm).min(2.0) } else { err / classes as f64 };
    for _ in 0..max_backtracks {
        let rec = witness.clone().with_step(step);
        let next = patched(current, &rec)?;
        if brier(&next) <= brier_before - c * step * err {
            return Ok((rec, next));
        }
        step *= shrink;
    }
    let rec = witness.with_step(err / classes as f64);
    let next = patched(current, &rec)?;
    Ok((rec, next))
}

/// Applies a fitted sequence to every row of a prediction matrix.
pub fn transform_matrix(probs: &[f64], classes: usize, seq: &PatchSequence) -> Result<Vec<f64>> {
    if classes != seq.classes {
        return Err(Error::domain(format!("predictions have {classes} classes, patches expect {}", seq.classes)));
    }
    let mut out = probs.to_vec();
    for rec in &seq.records {
        apply_to_matrix(&mut out, classes, rec)?;
    }
    Ok(out)
}

pub fn transform(preds: &LabeledPredictions, seq: &PatchSequence) -> Result<LabeledPredictions> {
    preds.with_probs(transform_matrix(preds.probs(), preds.classes(), seq)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_miscalibrated, gen_two_point, random_population, split};
    use crate::estimators::{uc_hat, uc_hat_oracle};
    use crate::numeric::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn kkt_residual(x: &[f64], p: &[f64]) -> f64 {
        // tau recovered from any positive coordinate
        let Some(i) = p.iter().position(|&v| v > 0.0) else { return f64::INFINITY };
        let tau = x[i] - p[i];
        let shape = x.iter().zip(p).map(|(xi, pi)| ((xi - tau).max(0.0) - pi).abs()).fold(0.0, f64::max);
        shape.max((p.iter().sum::<f64>() - 1.0).abs())
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[1.0, 1.0]), vec![0.5, 0.5]);
        let p = project_simplex(&[2.0, 0.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        assert!(kkt_residual(&[2.0, 0.0, 0.0], &p) < 1e-15);
        let inside = [0.2, 0.3, 0.5];
        let q = project_simplex(&inside);
        for (a, b) in inside.iter().zip(&q) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn projection_beats_grid_search() {
        let mut rng = stream_rng(40, 0, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let p = project_simplex(&x);
            let d = |q: &[f64]| q.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let steps = 200;
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let q = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                    assert!(d(&p) <= d(&q) + 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn projection_kkt_and_nonexpansive(
            x in prop::collection::vec(-3.0f64..3.0, 2..12),
            seed in any::<u64>(),
        ) {
            let p = project_simplex(&x);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!(kkt_residual(&x, &p) < 1e-10);
            let mut rng = stream_rng(seed, 0, 0);
            let raw: Vec<f64> = (0..x.len()).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let y: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let dist = |a: &[f64]| a.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist(&p) <= dist(&x) + 1e-10);
        }
    }

    #[test]
    fn single_utility_pool_returns_its_witness() {
        let d = gen_two_point(20).unwrap();
        let (w, err) = find_worst_witness(&d, &[UtilitySpec::TopClass {}]).unwrap();
        assert!((err - 0.2).abs() < 1e-12);
        assert_eq!((w.lo, w.hi, w.sign), (0.45, 0.45, 1));
        assert!(find_worst_witness(&d, &[]).is_err());
    }

    #[test]
    fn two_point_comb_pool_witness() {
        let d = gen_two_point(20).unwrap();
        let mut pool = comb_pool(3);
        pool.push(UtilitySpec::TopClass {});
        let (w, err) = find_worst_witness(&d, &pool).unwrap();
        // exhaustive evaluation of the pool with the brute-force estimator
        let values: Vec<f64> = pool.iter().map(|s| uc_hat_oracle(&d, s).unwrap()).collect();
        let best = values.iter().copied().fold(0.0, f64::max);
        let first = values.iter().position(|&v| (v - best).abs() < 1e-12).unwrap();
        assert!((err - best).abs() < 1e-12);
        assert_eq!(w.spec, pool[first]);
        // class 1 is predicted at 0.275 but realized 95% of the time there
        assert_eq!(w.spec, UtilitySpec::ClassWise { c: 1 });
        assert!((err - 13.5 / 40.0).abs() < 1e-12);
        assert_eq!((w.lo, w.hi), (0.275, 0.275));
    }

    #[test]
    fn witness_error_is_mean_signed_inner_product() {
        let mut rng = stream_rng(41, 0, 0);
        let dist = random_population(4, 5, &mut rng);
        let (d, _) = gen_miscalibrated(&dist, 400, 1).unwrap();
        let (w, err) = find_worst_witness(&d, &comb_pool(4)).unwrap();
        let mut total = 0.0;
        for (p, &y) in d.rows().zip(d.labels()) {
            let e = w.spec.eval(p).unwrap();
            if w.lo <= e.v && e.v <= w.hi {
                let inner: f64 = (0..4).map(|j| (p[j] - f64::from(u8::from(j == y))) * e.uvec[j]).sum();
                total += f64::from(w.sign) * inner;
            }
        }
        assert!((total / d.len() as f64 - err).abs() < 1e-12);
    }

    #[test]
    fn patch_identity_cases() {
        let p = [0.45, 0.275, 0.275];
        let outside = PatchRecord { spec: UtilitySpec::TopClass {}, lo: 0.5, hi: 0.6, sign: 1, step: 0.1 };
        assert_eq!(apply_patch(&p, &outside).unwrap(), p.to_vec());
        let zero = PatchRecord { spec: UtilitySpec::TopClass {}, lo: 0.45, hi: 0.45, sign: 1, step: 0.0 };
        assert_eq!(apply_patch(&p, &zero).unwrap(), p.to_vec());
    }

    #[test]
    fn two_point_patch_lowers_top_class_mass() {
        let p = [0.45, 0.275, 0.275];
        let rec = PatchRecord { spec: UtilitySpec::TopClass {}, lo: 0.45, hi: 0.45, sign: 1, step: 0.1 };
        let q = apply_patch(&p, &rec).unwrap();
        // 0.45 - 0.1 = 0.35, then the projection adds 0.1/3 to every coordinate
        assert!((q[0] - (0.35 + 0.1 / 3.0)).abs() < 1e-15);
        assert!(q[0] < 0.45);
        assert!(q.iter().all(|&x| x >= 0.0) && (q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_theoretical_step_reduces_the_witnessed_violation() {
        let d = gen_two_point(20).unwrap();
        let pool = [UtilitySpec::TopClass {}];
        let (w, err) = find_worst_witness(&d, &pool).unwrap();
        let rec = w.with_step(err / 3.0);
        let after = patched(&d, &rec).unwrap();
        assert!(uc_hat(&after, &pool[0]).unwrap().value < err);
        assert!(brier(&after) <= brier(&d) - err * err / 3.0 + 1e-10);
    }

    #[test]
    fn calibrated_input_needs_no_patches() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let d = LabeledPredictions::from_rows(&rows, vec![0, 1]).unwrap();
        let seq = fit(&d, &PatchConfig::new(3, 0.01)).unwrap();
        assert!(seq.records.is_empty() && seq.history.is_empty());
        assert_eq!(seq.final_err, 0.0);
    }

    #[test]
    fn config_errors() {
        let d = gen_two_point(20).unwrap();
        assert!(matches!(fit(&d, &PatchConfig::new(3, 0.0)), Err(Error::Config(_))));
        let mut c = PatchConfig::new(3, 0.1);
        c.max_iters = 0;
        assert!(fit(&d, &c).is_err());
        c.max_iters = 5;
        c.pool.clear();
        assert!(fit(&d, &c).is_err());
    }

    #[test]
    fn two_point_converges_with_theoretical_steps() {
        let d = gen_two_point(200).unwrap();
        let mut config = PatchConfig::new(3, 0.01);
        config.pool = vec![UtilitySpec::TopClass {}];
        let (seq, out) = fit_with_predictions(&d, &config).unwrap();
        assert!(uc_hat(&out, &UtilitySpec::TopClass {}).unwrap().value <= 0.01);
        assert!(brier(&out) < brier(&d));
        for h in &seq.history {
            assert!(h.brier_before - h.brier_after >= h.err * h.err / 3.0 - 1e-10);
        }
        assert!(seq.records.len() <= (2.0 * 3.0 / 0.01_f64.powi(2)).ceil() as usize + 1);
    }

    #[test]
    fn armijo_keeps_brier_monotone() {
        let mut rng = stream_rng(42, 0, 0);
        let dist = random_population(5, 6, &mut rng);
        let (d, _) = gen_miscalibrated(&dist, 2000, 2).unwrap();
        let mut config = PatchConfig::new(5, 0.02);
        config.step_rule = StepRule::armijo();
        let (seq, out) = fit_with_predictions(&d, &config).unwrap();
        assert!(!seq.history.is_empty());
        for h in &seq.history {
            assert!(h.brier_after <= h.brier_before);
            assert!(h.step > 0.0 && h.step <= 2.0);
        }
        let worst = uc_hat_many(&out, &config.pool).unwrap().iter().map(|e| e.value).fold(0.0, f64::max);
        assert!(worst <= 0.02);
    }

    #[test]
    fn ten_class_comb_pool_run() {
        let mut rng = stream_rng(43, 0, 0);
        let dist = random_population(10, 6, &mut rng);
        let (d, _) = gen_miscalibrated(&dist, 3000, 3).unwrap();
        let config = PatchConfig::new(10, 0.02);
        let (seq, out) = fit_with_predictions(&d, &config).unwrap();
        assert!(seq.history.iter().all(|h| h.brier_after <= h.brier_before));
        let worst = uc_hat_many(&out, &config.pool).unwrap().iter().map(|e| e.value).fold(0.0, f64::max);
        assert!(worst <= 0.02);
        assert_eq!(worst, seq.final_err);
    }

    #[test]
    fn transform_replays_fit_bitwise() {
        let mut rng = stream_rng(44, 0, 0);
        let dist = random_population(4, 5, &mut rng);
        let (d, _) = gen_miscalibrated(&dist, 1000, 4).unwrap();
        let (seq, out) = fit_with_predictions(&d, &PatchConfig::new(4, 0.02)).unwrap();
        let replay = transform(&d, &seq).unwrap();
        assert_eq!(replay, out);
        assert!((brier(&replay) - seq.history.last().unwrap().brier_after).abs() < 1e-9);
        for row in replay.rows() {
            assert!(row.iter().all(|&x| x >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(seq.apply(d.row(0)).unwrap(), replay.row(0).to_vec());
        }
        assert_eq!(transform(&d, &PatchSequence::empty(4)).unwrap(), d);
        assert!(transform(&d, &PatchSequence::empty(3)).is_err());
    }

    #[test]
    fn augmented_pool_is_deterministic() {
        let mut rng = stream_rng(45, 0, 0);
        let dist = random_population(4, 5, &mut rng);
        let (d, _) = gen_miscalibrated(&dist, 800, 5).unwrap();
        let mut config = PatchConfig::new(4, 0.03);
        config.augment = Some(Augment { families: vec![Family::Linear, Family::Rank], count: 16, seed: 3 });
        let a = fit(&d, &config).unwrap();
        let b = fit(&d, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.final_err <= 0.03 || a.records.len() == config.max_iters);
    }

    #[test]
    fn patches_generalize_to_held_out_rows() {
        let mut improved = 0;
        for seed in 0..20u64 {
            let mut rng = stream_rng(seed, 46, 0);
            let dist = random_population(4, 5, &mut rng);
            let (d, _) = gen_miscalibrated(&dist, 3000, seed).unwrap();
            let parts = split(&d, 0.7, seed).unwrap();
            let config = PatchConfig::new(4, 0.02);
            let seq = fit(&parts.calibration, &config).unwrap();
            let before = uc_hat_many(&parts.test, &config.pool).unwrap().iter().map(|e| e.value).fold(0.0, f64::max);
            let after_preds = transform(&parts.test, &seq).unwrap();
            let after = uc_hat_many(&after_preds, &config.pool).unwrap().iter().map(|e| e.value).fold(0.0, f64::max);
            improved += usize::from(after < before);
        }
        assert!(improved >= 18, "{improved}/20");
    }

    #[test]
    fn sequence_json_shape() {
        let rec = PatchRecord { spec: UtilitySpec::TopK { k: 1 }, lo: 0.1, hi: 0.2, sign: -1, step: 0.05 };
        let seq = PatchSequence { classes: 3, records: vec![rec], history: vec![], final_err: 0.0 };
        let v = serde_json::to_value(&seq).unwrap();
        assert_eq!(v["C"], 3);
        assert_eq!(v["records"][0]["sign"], -1);
        assert_eq!(v["records"][0]["spec"]["family"], "top_k");
        let back: PatchSequence = serde_json::from_value(v).unwrap();
        assert_eq!(back, seq);
    }
}

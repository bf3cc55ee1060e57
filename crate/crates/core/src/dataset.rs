//! Prediction/label containers, validation, splitting, synthetic generators
//! and exact finite-support populations.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{stream_rng, tags};

/// Row-sum tolerance for externally supplied predictions.
pub const INPUT_SUM_TOL: f64 = 1e-6;
/// Row-sum deviation beyond which unrenormalized input is rejected.
pub const FATAL_SUM_TOL: f64 = 1e-3;
/// Most negative entry accepted without renormalization.
pub const FATAL_NEG_TOL: f64 = -1e-6;
/// Tolerance for internally constructed simplex points.
pub const INTERNAL_TOL: f64 = 1e-12;

/// An `n x C` matrix of predicted class probabilities with the observed
/// label of every row. Probabilities are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPredictions {
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledPredictions {
    /// Builds the container, checking only shape (`n >= 1`, `C >= 2`,
    /// `probs.len() == n * C`). Use [`validate`] for the simplex checks.
    pub fn new(probs: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::domain(format!("need at least 2 classes, got {classes}")));
        }
        if labels.is_empty() {
            return Err(Error::domain("need at least one row"));
        }
        if probs.len() != labels.len() * classes {
            return Err(Error::domain(format!(
                "probability matrix has {} entries, expected {} rows x {} classes",
                probs.len(),
                labels.len(),
                classes
            )));
        }
        Ok(Self { probs, labels, classes })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != classes) {
            return Err(Error::domain(format!(
                "row {i} has {} columns, expected {classes}",
                r.len()
            )));
        }
        Self::new(rows.concat(), labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.probs.chunks_exact(self.classes)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Same labels, new probabilities. Used by recalibration.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(probs, self.labels.clone(), self.classes)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut probs = Vec::with_capacity(indices.len() * self.classes);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            probs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(probs, labels, self.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub rows: usize,
    pub classes: usize,
    /// Largest `|sum(row) - 1|` over rows, before any correction.
    pub max_row_sum_deviation: f64,
    pub worst_row: usize,
    pub min_entry: f64,
    /// Indices of rows whose label is outside `0..C`.
    pub label_violations: Vec<usize>,
    pub renormalized: bool,
    #[serde(skip)]
    pub corrected: Option<LabeledPredictions>,
}

/// Checks that every row is a simplex point and every label is in range.
///
/// Without `renormalize`, rows deviating from sum one by more than
/// [`FATAL_SUM_TOL`], entries below [`FATAL_NEG_TOL`] and out-of-range
/// labels are fatal. With `renormalize`, entries are clamped to `[0, 1]` and
/// every row divided by its sum; the corrected data lands in
/// [`ValidationReport::corrected`]. Labels can never be repaired.
pub fn validate(preds: &LabeledPredictions, renormalize: bool) -> Result<ValidationReport> {
    let mut max_dev = 0.0_f64;
    let mut worst_row = 0;
    let mut min_entry = f64::INFINITY;
    for (i, row) in preds.rows().enumerate() {
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("row {i}, column {j}: non-finite entry")));
        }
        let dev = (row.iter().sum::<f64>() - 1.0).abs();
        if dev > max_dev {
            max_dev = dev;
            worst_row = i;
        }
        min_entry = row.iter().copied().fold(min_entry, f64::min);
    }
    let label_violations: Vec<usize> = preds
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &y)| y >= preds.classes())
        .map(|(i, _)| i)
        .collect();
    if let Some(&i) = label_violations.first() {
        return Err(Error::Validation(format!(
            "{} label(s) outside 0..{}; first at row {i} (label {})",
            label_violations.len(),
            preds.classes(),
            preds.label(i)
        )));
    }

    let mut report = ValidationReport {
        rows: preds.len(),
        classes: preds.classes(),
        max_row_sum_deviation: max_dev,
        worst_row,
        min_entry,
        label_violations,
        renormalized: renormalize,
        corrected: None,
    };

    if renormalize {
        let mut probs = preds.probs().to_vec();
        for (i, row) in probs.chunks_exact_mut(preds.classes()).enumerate() {
            for x in row.iter_mut() {
                *x = x.clamp(0.0, 1.0);
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::Validation(format!("row {i} has no positive mass")));
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        report.corrected = Some(preds.with_probs(probs)?);
        return Ok(report);
    }

    if max_dev > FATAL_SUM_TOL {
        return Err(Error::Validation(format!(
            "row {worst_row} sums to 1 {:+e} (tolerance {FATAL_SUM_TOL:e})",
            preds.row(worst_row).iter().sum::<f64>() - 1.0
        )));
    }
    if min_entry < FATAL_NEG_TOL {
        return Err(Error::Validation(format!(
            "negative probability {min_entry:e} below tolerance {FATAL_NEG_TOL:e}"
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub calibration: LabeledPredictions,
    pub test: LabeledPredictions,
    pub calibration_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

/// Seeded Fisher-Yates shuffle of the row indices; the first
/// `round(fraction * n)` go to the calibration side.
pub fn split(preds: &LabeledPredictions, fraction: f64, seed: u64) -> Result<SplitResult> {
    let n = preds.len();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("split fraction {fraction} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::domain("cannot split fewer than 2 rows"));
    }
    let n_cal = (fraction * n as f64).round() as usize;
    if n_cal == 0 || n_cal == n {
        return Err(Error::domain(format!(
            "fraction {fraction} of {n} rows leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, tags::SPLIT, 0));
    let test_indices = idx.split_off(n_cal);
    Ok(SplitResult {
        calibration: preds.select(&idx)?,
        test: preds.select(&test_indices)?,
        calibration_indices: idx,
        test_indices,
        seed,
        fraction,
    })
}

/// Finite-support population: prediction vectors `support[s]` occurring
/// with probability `weights[s]`, and label law `cond_label[s]` given that
/// prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub cond_label: Vec<Vec<f64>>,
}

impl FiniteDistribution {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>, cond_label: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self { support, weights, cond_label };
        d.check()?;
        Ok(d)
    }

    pub fn classes(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Checks the population invariants at [`INTERNAL_TOL`].
    pub fn check(&self) -> Result<()> {
        let s = self.support.len();
        if s == 0 {
            return Err(Error::domain("empty support"));
        }
        if self.weights.len() != s || self.cond_label.len() != s {
            return Err(Error::domain(format!(
                "support has {s} points but {} weights and {} label laws",
                self.weights.len(),
                self.cond_label.len()
            )));
        }
        let c = self.classes();
        if c < 2 {
            return Err(Error::domain("need at least 2 classes"));
        }
        for (name, vecs) in [("support", &self.support), ("cond_label", &self.cond_label)] {
            for (i, v) in vecs.iter().enumerate() {
                if v.len() != c {
                    return Err(Error::domain(format!("{name}[{i}] has length {}, expected {c}", v.len())));
                }
                if !is_simplex_point(v, INTERNAL_TOL) {
                    return Err(Error::domain(format!("{name}[{i}] is not a probability vector")));
                }
            }
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::domain("weights must be strictly positive"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > INTERNAL_TOL {
            return Err(Error::domain(format!("weights sum to {total}, expected 1")));
        }
        for a in 0..s {
            for b in a + 1..s {
                let dist = self.support[a]
                    .iter()
                    .zip(&self.support[b])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                if dist <= INTERNAL_TOL {
                    return Err(Error::domain(format!("support points {a} and {b} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Draws `n` labeled rows: a support index by weight, then a label from
    /// its conditional law.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<LabeledPredictions> {
        let c = self.classes();
        let mut probs = Vec::with_capacity(n * c);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s = sample_categorical(&self.weights, rng);
            probs.extend_from_slice(&self.support[s]);
            labels.push(sample_categorical(&self.cond_label[s], rng));
        }
        LabeledPredictions::new(probs, labels, c)
    }
}

pub fn is_simplex_point(p: &[f64], tol: f64) -> bool {
    p.iter().all(|&x| x >= -tol && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Inverse-CDF draw from a probability vector.
fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding gap above the accumulated mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Uniform point on the simplex: normalized unit-rate exponentials.
pub fn uniform_simplex_point(c: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut e: Vec<f64> = (0..c).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    if s > 0.0 {
        e.iter_mut().for_each(|x| *x /= s);
    } else {
        e.iter_mut().for_each(|x| *x = 1.0 / c as f64);
    }
    e
}

pub const TWO_POINT_LOW: [f64; 3] = [0.45, 0.275, 0.275];
pub const TWO_POINT_HIGH: [f64; 3] = [0.55, 0.225, 0.225];

/// Two-point construction on which a 3-bin top-class estimator reads zero
/// while the worst-interval error is 0.2.
///
/// `n_per_group` rows at `(0.45, 0.275, 0.275)` with exactly 5% labeled
/// class 0 and `n_per_group` rows at `(0.55, 0.225, 0.225)` with exactly
/// 95% labeled class 0; all other labels are class 1. Rows alternate
/// low/high; within each group the class-0 labels come first.
pub fn gen_two_point(n_per_group: usize) -> Result<LabeledPredictions> {
    if n_per_group < 20 || !n_per_group.is_multiple_of(20) {
        return Err(Error::domain(format!(
            "n_per_group must be a positive multiple of 20, got {n_per_group}"
        )));
    }
    let low_hits = n_per_group / 20;
    let high_hits = n_per_group - low_hits;
    let mut probs = Vec::with_capacity(6 * n_per_group);
    let mut labels = Vec::with_capacity(2 * n_per_group);
    for k in 0..n_per_group {
        probs.extend_from_slice(&TWO_POINT_LOW);
        labels.push(if k < low_hits { 0 } else { 1 });
        probs.extend_from_slice(&TWO_POINT_HIGH);
        labels.push(if k < high_hits { 0 } else { 1 });
    }
    LabeledPredictions::new(probs, labels, 3)
}

/// The population behind [`gen_two_point`].
pub fn two_point_population() -> FiniteDistribution {
    FiniteDistribution {
        support: vec![TWO_POINT_LOW.to_vec(), TWO_POINT_HIGH.to_vec()],
        weights: vec![0.5, 0.5],
        cond_label: vec![vec![0.05, 0.95, 0.0], vec![0.95, 0.05, 0.0]],
    }
}

/// Perfectly calibrated synthetic law: `support_size` uniform simplex
/// points with equal weight and `P(Y | p) = p`. Returns a sample of `n`
/// rows together with the population.
pub fn gen_calibrated(
    n: usize,
    classes: usize,
    support_size: usize,
    seed: u64,
) -> Result<(LabeledPredictions, FiniteDistribution)> {
    if support_size == 0 {
        return Err(Error::domain("support_size must be at least 1"));
    }
    if classes < 2 {
        return Err(Error::domain("need at least 2 classes"));
    }
    let mut rng = stream_rng(seed, tags::SYNTH_SUPPORT, 0);
    let support: Vec<Vec<f64>> = (0..support_size)
        .map(|_| uniform_simplex_point(classes, &mut rng))
        .collect();
    let dist = FiniteDistribution {
        cond_label: support.clone(),
        weights: vec![1.0 / support_size as f64; support_size],
        support,
    };
    let preds = dist.sample(n, &mut stream_rng(seed, tags::SYNTH_SAMPLE, 0))?;
    Ok((preds, dist))
}

/// Samples `n` rows from an arbitrary finite-support law.
pub fn gen_miscalibrated(
    dist: &FiniteDistribution,
    n: usize,
    seed: u64,
) -> Result<(LabeledPredictions, FiniteDistribution)> {
    dist.check()?;
    let preds = dist.sample(n, &mut stream_rng(seed, tags::SYNTH_SAMPLE, 0))?;
    Ok((preds, dist.clone()))
}

/// A random finite law with `support_size` uniform simplex predictions and
/// independent uniform label laws. Weights are normalized exponentials.
pub fn random_population(classes: usize, support_size: usize, rng: &mut impl Rng) -> FiniteDistribution {
    let support = (0..support_size)
        .map(|_| uniform_simplex_point(classes, rng))
        .collect();
    let cond_label = (0..support_size)
        .map(|_| uniform_simplex_point(classes, rng))
        .collect();
    let mut weights = uniform_simplex_point(support_size, rng);
    // guard against a zero weight from an underflowed exponential
    for w in &mut weights {
        *w = w.max(1e-9);
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    FiniteDistribution { support, weights, cond_label }
}

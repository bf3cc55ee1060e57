//! Randomized agreement check between [`uc_hat`] and [`uc_hat_oracle`].

use rand::Rng;
use serde::Serialize;

use crate::dataset::{uniform_simplex_point, LabeledPredictions};
use crate::error::{Error, Result};
use crate::numeric::{stream_rng, tags};
use crate::utilities::{sample_any, UtilitySpec};

use super::{uc_hat, uc_hat_oracle};

/// Agreement required between the two estimators.
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct OracleFailure {
    pub trial: usize,
    /// Master seed; the trial is reproduced by `oracle_instance(seed, trial, ..)`.
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
    pub fast: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub trials: usize,
    pub max_abs_diff: f64,
    pub failures: Vec<OracleFailure>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Trial `trial` of a check run: `n <= n_max` rows over `C <= c_max`
/// classes and one utility from any family. Odd trials draw probabilities
/// on a coarse grid so that ties in `v` are common.
pub fn oracle_instance(seed: u64, trial: usize, n_max: usize, c_max: usize) -> (LabeledPredictions, UtilitySpec) {
    let mut rng = stream_rng(seed, tags::ORACLE_CHECK, trial as u64);
    let n = rng.gen_range(1..=n_max);
    let c = rng.gen_range(2..=c_max);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            if trial.is_multiple_of(2) {
                return uniform_simplex_point(c, &mut rng);
            }
            let raw: Vec<f64> = (0..c).map(|_| f64::from(rng.gen_range(0u32..4))).collect();
            let s: f64 = raw.iter().sum();
            if s == 0.0 {
                vec![1.0 / c as f64; c]
            } else {
                raw.iter().map(|x| x / s).collect()
            }
        })
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let preds = LabeledPredictions::from_rows(&rows, labels).expect("generated rows are valid");
    (preds, sample_any(c, &mut rng))
}

/// Runs `trials` random instances. With `inject_fault`, the fast value of
/// the first instance with a positive error is negated, which must be
/// reported as a failure.
pub fn oracle_check(trials: usize, n_max: usize, c_max: usize, seed: u64, inject_fault: bool) -> Result<OracleReport> {
    if n_max == 0 || c_max < 2 {
        return Err(Error::Config("oracle check needs n_max >= 1 and c_max >= 2".into()));
    }
    let mut report = OracleReport { trials, max_abs_diff: 0.0, failures: Vec::new() };
    let mut fault_pending = inject_fault;
    for trial in 0..trials {
        let (preds, spec) = oracle_instance(seed, trial, n_max, c_max);
        let mut fast = uc_hat(&preds, &spec)?.value;
        let oracle = uc_hat_oracle(&preds, &spec)?;
        if fault_pending && fast > 0.0 {
            fast = -fast;
            fault_pending = false;
        }
        let diff = (fast - oracle).abs();
        report.max_abs_diff = report.max_abs_diff.max(diff);
        if !(diff <= ORACLE_TOL) {
            report.failures.push(OracleFailure { trial, seed, n: preds.len(), classes: preds.classes(), fast, oracle });
        }
    }
    Ok(report)
}

//! Worst-interval utility calibration estimator, its brute-force oracle,
//! binned baselines, Brier score and accuracy, and exact population-level
//! quantities on finite distributions.

mod check;
mod binned;
mod population;

pub use check::{oracle_check, oracle_instance, OracleFailure, OracleReport, ORACLE_TOL};
pub use binned::{cwe_binned, tce_binned, BinKind, BinScheme, ClassWeights};
pub use population::{
    dcu_bound_check, population_terms, population_uc, risk_gap_check, DcuCheck, RiskGapCheck,
};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPredictions;
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, ExactSum};
use crate::utilities::{comb_pool, UtilitySpec};

/// Largest input accepted by [`uc_hat_oracle`].
pub const ORACLE_MAX_N: usize = 10_000;

/// Worst-interval calibration value with its witness.
///
/// `sign * mean(r_i * 1{v_i in [lo, hi]}) == value`, where `r_i` is the
/// realized-minus-predicted utility residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcEstimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub sign: i8,
}

/// Per-row `(v_i, r_i)` with `v_i = v_u(p_i)` and `r_i = ū(p_i)[y_i] - v_i`.
pub fn residuals(preds: &LabeledPredictions, spec: &UtilitySpec) -> Result<Vec<(f64, f64)>> {
    let mut uvec = vec![0.0; preds.classes()];
    preds
        .rows()
        .zip(preds.labels())
        .map(|(p, &y)| {
            let v = spec.eval_into(p, &mut uvec)?;
            Ok((v, uvec[y] - v))
        })
        .collect()
}

/// Supremum over closed intervals `I` of `|sum_{v_i in I} r_i| / scale`.
///
/// Pairs are sorted by `v` and grouped into blocks of equal `v` (a closed
/// interval cannot separate equal values). With prefix sums `P_0 = 0`,
/// `P_b = P_{b-1} + block_b`, every interval sum is a difference of two
/// prefix sums, so the supremum is `max P - min P`. Extremum ties resolve to
/// the earliest prefix index.
pub fn worst_interval(mut pairs: Vec<(f64, f64)>, scale: f64) -> UcEstimate {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut blocks: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        let mut acc = ExactSum::new();
        while i < pairs.len() && pairs[i].0 == v {
            acc.add(pairs[i].1);
            i += 1;
        }
        blocks.push((v, acc.value()));
    }

    let (mut prefix, mut pmax, mut pmin) = (0.0, 0.0, 0.0);
    let (mut imax, mut imin) = (0usize, 0usize);
    for (b, &(_, s)) in blocks.iter().enumerate() {
        prefix += s;
        if prefix > pmax {
            pmax = prefix;
            imax = b + 1;
        }
        if prefix < pmin {
            pmin = prefix;
            imin = b + 1;
        }
    }
    let first_v = blocks.first().map_or(0.0, |b| b.0);
    if imax == imin {
        return UcEstimate { value: 0.0, lo: first_v, hi: first_v, sign: 1 };
    }
    let (a, b) = (imax.min(imin), imax.max(imin));
    UcEstimate {
        value: (pmax - pmin) / scale,
        lo: blocks[a].0,
        hi: blocks[b - 1].0,
        sign: if imax > imin { 1 } else { -1 },
    }
}

/// Empirical utility calibration error of `preds` against one utility,
/// in `O(n log n + n T_eval)`.
pub fn uc_hat(preds: &LabeledPredictions, spec: &UtilitySpec) -> Result<UcEstimate> {
    Ok(worst_interval(residuals(preds, spec)?, preds.len() as f64))
}

/// Brute-force counterpart of [`uc_hat`]: enumerates every closed interval
/// between observed `v` values (and the empty interval) and returns the
/// largest absolute normalized residual sum. Quadratic; refuses
/// `n > ORACLE_MAX_N`.
pub fn uc_hat_oracle(preds: &LabeledPredictions, spec: &UtilitySpec) -> Result<f64> {
    let n = preds.len();
    if n > ORACLE_MAX_N {
        return Err(Error::Guard { n, limit: ORACLE_MAX_N });
    }
    let mut pairs = residuals(preds, spec)?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = 0.0_f64;
    for start in 0..n {
        if start > 0 && pairs[start - 1].0 == pairs[start].0 {
            continue;
        }
        let mut sum = 0.0;
        for end in start..n {
            sum += pairs[end].1;
            // only intervals whose right end closes a group of equal values
            if end + 1 == n || pairs[end + 1].0 != pairs[end].0 {
                best = best.max(sum.abs() / n as f64);
            }
        }
    }
    Ok(best)
}

/// Mean squared distance between one-hot labels and predictions.
pub fn brier(preds: &LabeledPredictions) -> f64 {
    let total = exact_sum(preds.rows().zip(preds.labels()).map(|(p, &y)| row_brier(p, y)));
    total / preds.len() as f64
}

pub(crate) fn row_brier(p: &[f64], y: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(j, &pj)| {
            let d = if j == y { 1.0 - pj } else { pj };
            d * d
        })
        .sum()
}

/// Fraction of rows whose argmax (smallest index on ties) equals the label.
pub fn accuracy(preds: &LabeledPredictions) -> f64 {
    let hits = preds
        .rows()
        .zip(preds.labels())
        .filter(|(p, &y)| top_class(p) == y)
        .count();
    hits as f64 / preds.len() as f64
}

pub(crate) fn top_class(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = j;
        }
    }
    best
}

/// The columns of a calibration evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub brier: f64,
    pub tce_binned: f64,
    pub cwe_binned: f64,
    #[serde(skip_serializing_if = "IndexMap::is_empty", default)]
    pub uc: IndexMap<String, UcEstimate>,
    /// Max of the worst-interval error over the class-wise plus top-K pool.
    pub uc_comb: f64,
}

/// Report keys for a list of utilities: the family label, suffixed with the
/// position when the label alone is ambiguous.
pub fn utility_ids(specs: &[UtilitySpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| if s.has_unique_label() { s.label() } else { format!("{}#{i}", s.label()) })
        .collect()
}

/// Computes `uc_hat` for each spec, in parallel, preserving order.
pub fn uc_hat_many(preds: &LabeledPredictions, specs: &[UtilitySpec]) -> Result<Vec<UcEstimate>> {
    specs.par_iter().map(|s| uc_hat(preds, s)).collect()
}

pub fn evaluate(
    preds: &LabeledPredictions,
    scheme: &BinScheme,
    weights: &[f64],
    utilities: &[UtilitySpec],
) -> Result<MetricReport> {
    for s in utilities {
        s.check(preds.classes())?;
    }
    let comb = uc_hat_many(preds, &comb_pool(preds.classes()))?;
    let uc_comb = comb.iter().map(|e| e.value).fold(0.0, f64::max);
    let uc = utility_ids(utilities)
        .into_iter()
        .zip(uc_hat_many(preds, utilities)?)
        .collect();
    Ok(MetricReport {
        accuracy: accuracy(preds),
        brier: brier(preds),
        tce_binned: tce_binned(preds, scheme),
        cwe_binned: cwe_binned(preds, scheme, weights)?,
        uc,
        uc_comb,
    })
}

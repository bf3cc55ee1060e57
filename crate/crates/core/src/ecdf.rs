//! Distribution of per-utility calibration errors over a sampled utility
//! class, with Dvoretzky-Kiefer-Wolfowitz confidence bands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPredictions;
use crate::error::{Error, Result};
use crate::estimators::uc_hat;
use crate::numeric::{stream_rng, tags};
use crate::utilities::{Family, UtilitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfResult {
    /// Per-utility errors, sorted ascending.
    pub errors: Vec<f64>,
    pub family: Family,
    pub m: usize,
    pub seed: u64,
    pub band_halfwidth: Option<f64>,
    /// Sampled utilities in draw order, kept only on request.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub utilities: Option<Vec<UtilitySpec>>,
}

/// The `index`-th utility of the sampled class for a given master seed.
pub fn sampled_utility(family: Family, classes: usize, seed: u64, index: usize) -> UtilitySpec {
    family.sample(classes, &mut stream_rng(seed, tags::ECDF, index as u64))
}

/// Samples `m` utilities from `family` and computes the worst-interval
/// error for each. Utility `i` is drawn from its own stream `(seed, i)`, so
/// the output does not depend on how work is scheduled.
pub fn ecdf_evaluate(
    preds: &LabeledPredictions,
    family: Family,
    m: usize,
    seed: u64,
    keep_utilities: bool,
) -> Result<EcdfResult> {
    if m == 0 {
        return Err(Error::domain("M must be at least 1"));
    }
    let classes = preds.classes();
    let drawn: Vec<(f64, Option<UtilitySpec>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let spec = sampled_utility(family, classes, seed, i);
            let value = uc_hat(preds, &spec)?.value;
            Ok((value, keep_utilities.then_some(spec)))
        })
        .collect::<Result<_>>()?;
    let (mut errors, specs): (Vec<f64>, Vec<Option<UtilitySpec>>) = drawn.into_iter().unzip();
    errors.sort_by(f64::total_cmp);
    Ok(EcdfResult {
        errors,
        family,
        m,
        seed,
        band_halfwidth: None,
        utilities: keep_utilities.then(|| specs.into_iter().flatten().collect()),
    })
}

impl EcdfResult {
    /// Attaches the DKW half-width for confidence `1 - delta`.
    pub fn with_band(mut self, delta: f64) -> Result<Self> {
        self.band_halfwidth = Some(dkw_band(self.m, delta)?);
        Ok(self)
    }

    /// Empirical CDF at `x`: fraction of errors `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        ecdf_at(&self.errors, x)
    }

    /// Empirical quantile: the smallest error with CDF at least `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let k = ((q * self.errors.len() as f64).ceil() as usize).clamp(1, self.errors.len());
        self.errors[k - 1]
    }

    /// `(error, cdf)` rows with `cdf = rank / M`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let m = self.errors.len() as f64;
        self.errors.iter().enumerate().map(move |(i, &e)| (e, (i + 1) as f64 / m))
    }
}

fn ecdf_at(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&e| e <= x) as f64 / sorted.len() as f64
}

/// DKW half-width `sqrt(ln(2/delta) / (2M))`: with probability at least
/// `1 - delta` the eCDF of `M` draws is uniformly within this of the CDF.
pub fn dkw_band(m: usize, delta: f64) -> Result<f64> {
    if m == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("dkw band needs M >= 1 and 0 < delta < 1 (M={m}, delta={delta})")));
    }
    Ok(((2.0 / delta).ln() / (2.0 * m as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EcdfDistance {
    pub sup: f64,
    /// L2 distance of the two step functions over `[0, 2]`.
    pub l2: f64,
}

/// Sup and L2 distances between two eCDFs of the same family.
pub fn ecdf_compare(a: &EcdfResult, b: &EcdfResult) -> Result<EcdfDistance> {
    if a.family != b.family {
        return Err(Error::domain("cannot compare eCDFs of different utility families"));
    }
    Ok(step_distance(&a.errors, &b.errors))
}

/// Both CDFs are right-continuous and constant between jump points, so the
/// sup is attained at a jump and the L2 integral is a finite sum.
pub(crate) fn step_distance(a: &[f64], b: &[f64]) -> EcdfDistance {
    let mut points: Vec<f64> = a.iter().chain(b).copied().filter(|x| (0.0..=2.0).contains(x)).collect();
    points.extend([0.0, 2.0]);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut sup = 0.0_f64;
    let mut sq = 0.0;
    for w in points.windows(2) {
        let d = (ecdf_at(a, w[0]) - ecdf_at(b, w[0])).abs();
        sup = sup.max(d);
        sq += d * d * (w[1] - w[0]);
    }
    let last = *points.last().unwrap();
    sup = sup.max((ecdf_at(a, last) - ecdf_at(b, last)).abs());
    EcdfDistance { sup, l2: sq.sqrt() }
}

//! Binned top-class and class-wise calibration errors.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPredictions;
use crate::error::{Error, Result};
use crate::numeric::ExactSum;

use super::top_class;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BinKind {
    /// `m` bins of width `1/m` on `[0, 1]`.
    EqualWidth,
    /// Quantile edges: each bin holds about `n/m` observations.
    EqualWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinScheme {
    pub kind: BinKind,
    pub bins: usize,
}

impl Default for BinScheme {
    fn default() -> Self {
        Self { kind: BinKind::EqualWeight, bins: 15 }
    }
}

impl BinScheme {
    pub fn new(kind: BinKind, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("number of bins must be positive".into()));
        }
        Ok(Self { kind, bins })
    }

    /// Non-decreasing, de-duplicated bin edges for `values`. Bins are
    /// `[e_j, e_{j+1})` except the last, which is closed; values below the
    /// first edge or above the last land in the outer bins.
    pub fn edges(&self, values: &[f64]) -> Vec<f64> {
        let m = self.bins;
        match self.kind {
            BinKind::EqualWidth => (0..=m).map(|j| j as f64 / m as f64).collect(),
            BinKind::EqualWeight => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len();
                let mut edges: Vec<f64> = (0..=m)
                    .map(|j| {
                        let pos = (n * j).div_ceil(m);
                        sorted[pos.min(n - 1)]
                    })
                    .collect();
                edges.dedup();
                edges
            }
        }
    }

    /// Number of bins induced by `edges` (at least one).
    pub fn bin_count(edges: &[f64]) -> usize {
        edges.len().saturating_sub(1).max(1)
    }

    /// Index of the bin containing `x`.
    pub fn assign(edges: &[f64], x: f64) -> usize {
        let k = Self::bin_count(edges);
        if edges.len() < 2 {
            return 0;
        }
        // number of interior edges <= x
        edges[1..edges.len() - 1].partition_point(|&e| e <= x).min(k - 1)
    }
}

/// Sums `|sum(conf) - sum(hit)| / n` over the bins of `conf`.
fn binned_gap(conf: &[f64], hit: &[bool], scheme: &BinScheme) -> f64 {
    let n = conf.len() as f64;
    let edges = scheme.edges(conf);
    let k = BinScheme::bin_count(&edges);
    let mut conf_sum = vec![ExactSum::new(); k];
    let mut hit_count = vec![0usize; k];
    for (&x, &h) in conf.iter().zip(hit) {
        let b = BinScheme::assign(&edges, x);
        conf_sum[b].add(x);
        hit_count[b] += usize::from(h);
    }
    conf_sum
        .iter()
        .zip(&hit_count)
        .map(|(s, &h)| (s.value() - h as f64).abs() / n)
        .sum()
}

/// Binned top-class calibration error on the top-class confidences.
pub fn tce_binned(preds: &LabeledPredictions, scheme: &BinScheme) -> f64 {
    let mut conf = Vec::with_capacity(preds.len());
    let mut hit = Vec::with_capacity(preds.len());
    for (p, &y) in preds.rows().zip(preds.labels()) {
        let top = top_class(p);
        conf.push(p[top]);
        hit.push(top == y);
    }
    binned_gap(&conf, &hit, scheme)
}

/// Class weighting for the class-wise error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ClassWeights {
    #[default]
    Uniform,
    /// Observed label frequencies.
    Empirical,
}

impl ClassWeights {
    pub fn weights(self, preds: &LabeledPredictions) -> Vec<f64> {
        let c = preds.classes();
        match self {
            ClassWeights::Uniform => vec![1.0 / c as f64; c],
            ClassWeights::Empirical => {
                let mut w = vec![0.0; c];
                for &y in preds.labels() {
                    w[y] += 1.0;
                }
                w.iter_mut().for_each(|x| *x /= preds.len() as f64);
                w
            }
        }
    }
}

/// Weighted binned class-wise calibration error; each class gets its own
/// edges computed from that class's probability column.
pub fn cwe_binned(preds: &LabeledPredictions, scheme: &BinScheme, weights: &[f64]) -> Result<f64> {
    let c = preds.classes();
    if weights.len() != c {
        return Err(Error::domain(format!("{} class weights for {c} classes", weights.len())));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain("class weights must be non-negative and sum to 1"));
    }
    let mut total = 0.0;
    let mut column = Vec::with_capacity(preds.len());
    let mut hit = Vec::with_capacity(preds.len());
    for (class, &w) in weights.iter().enumerate() {
        column.clear();
        hit.clear();
        for (p, &y) in preds.rows().zip(preds.labels()) {
            column.push(p[class]);
            hit.push(y == class);
        }
        total += w * binned_gap(&column, &hit, scheme);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_two_point;
    use crate::estimators::tests::random_preds;
    use crate::estimators::uc_hat;
    use crate::numeric::stream_rng;
    use crate::utilities::UtilitySpec;
    use rand::Rng;

    #[test]
    fn two_point_tce_is_zero() {
        let d = gen_two_point(20).unwrap();
        let scheme = BinScheme::new(BinKind::EqualWidth, 3).unwrap();
        assert_eq!(tce_binned(&d, &scheme), 0.0);
    }

    #[test]
    fn equal_weight_edges() {
        let s = BinScheme::new(BinKind::EqualWeight, 4).unwrap();
        let vals: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(s.edges(&vals), vec![0.0, 2.0, 4.0, 6.0, 7.0]);
        let counts = vals.iter().fold([0; 4], |mut acc, &x| {
            acc[BinScheme::assign(&s.edges(&vals), x)] += 1;
            acc
        });
        assert_eq!(counts, [2, 2, 2, 2]);
        // heavy ties collapse bins
        let tied = [0.5; 10];
        let e = s.edges(&tied);
        assert_eq!(e, vec![0.5]);
        assert_eq!(BinScheme::assign(&e, 0.5), 0);
    }

    #[test]
    fn equal_width_assignment() {
        let s = BinScheme::new(BinKind::EqualWidth, 3).unwrap();
        let e = s.edges(&[]);
        assert_eq!(BinScheme::assign(&e, 0.0), 0);
        assert_eq!(BinScheme::assign(&e, 0.45), 1);
        assert_eq!(BinScheme::assign(&e, 2.0 / 3.0), 2);
        assert_eq!(BinScheme::assign(&e, 1.0), 2);
        assert!(BinScheme::new(BinKind::EqualWidth, 0).is_err());
    }

    #[test]
    fn weight_validation() {
        let d = gen_two_point(20).unwrap();
        let s = BinScheme::default();
        assert!(cwe_binned(&d, &s, &[0.5, 0.5]).is_err());
        assert!(cwe_binned(&d, &s, &[0.5, 0.6, -0.1]).is_err());
        assert!(cwe_binned(&d, &s, &[0.2, 0.3, 0.4]).is_err());
        let w = ClassWeights::Empirical.weights(&d);
        assert_eq!(w, vec![0.5, 0.5, 0.0]);
        assert!(cwe_binned(&d, &s, &w).is_ok());
    }

    #[test]
    fn binned_errors_are_dominated_by_worst_interval() {
        let mut rng = stream_rng(21, 0, 0);
        for _ in 0..100 {
            let n = rng.gen_range(20..300);
            let c = rng.gen_range(2..6);
            let p = random_preds(n, c, &mut rng);
            let w = vec![1.0 / c as f64; c];
            let uc_top = uc_hat(&p, &UtilitySpec::TopClass {}).unwrap().value;
            let uc_cw: f64 = (0..c)
                .map(|k| w[k] * uc_hat(&p, &UtilitySpec::ClassWise { c: k }).unwrap().value)
                .sum();
            for m in [5, 15] {
                for kind in [BinKind::EqualWidth, BinKind::EqualWeight] {
                    let s = BinScheme::new(kind, m).unwrap();
                    assert!(tce_binned(&p, &s) <= m as f64 * uc_top);
                    assert!(cwe_binned(&p, &s, &w).unwrap() <= m as f64 * uc_cw);
                }
            }
        }
    }
}

//! Utility families `u(p, e_j)` with payoff vectors `ū(p)` and predicted
//! utilities `v_u(p) = <p, ū(p)>`, plus samplers over utility classes.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid of DCG discount exponents.
pub const DCG_GAMMA_GRID: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0];

/// Parameterization of a single utility function.
///
/// JSON form: `{"family": "<name>", "params": {...}}`. Matrices are
/// row-major arrays of arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// Payoff 1 for the argmax class.
    TopClass {},
    ClassWise { c: usize },
    /// Payoff 1 when the outcome is among the `k` highest-ranked classes.
    TopK { k: usize },
    /// Payoff `theta[r - 1]` when the outcome has rank `r`.
    Rank { theta: Vec<f64> },
    Linear { a: Vec<f64> },
    /// Rank utility with discounts `(log2(1 + r))^-gamma`.
    Dcg { gamma: f64 },
    /// `loss` is `C x K`: the negated loss of the Bayes action for `p`.
    Decision { loss: Vec<Vec<f64>> },
    /// `gain[i][j]`: gain of acting on class `j` when the truth is `i`.
    GainMatrix { gain: Vec<Vec<f64>> },
    /// Expected similarity `u(p, e_j) = sum_i p_i sim[i][j]`.
    Similarity { sim: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEvaluation {
    pub uvec: Vec<f64>,
    pub v: f64,
}

/// 1-based ranks of the classes under the ordering `(-p_j, j)`: ties go to
/// the smaller class index, so the result is always a permutation of `1..=C`.
pub fn rank_of(p: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; p.len()];
    for (pos, j) in sorted_classes(p).into_iter().enumerate() {
        ranks[j] = pos + 1;
    }
    ranks
}

/// Class indices by decreasing probability, ties by increasing index.
fn sorted_classes(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    // stable: equal probabilities keep index order
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    order
}

/// First index attaining the maximum.
fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in xs.enumerate() {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dcg_discounts(classes: usize, gamma: f64) -> Vec<f64> {
    (1..=classes)
        .map(|r| (1.0 + r as f64).log2().powf(-gamma))
        .collect()
}

impl UtilitySpec {
    /// Short identifier used as a report key. Families with vector or
    /// matrix parameters are not distinguished by their parameters here;
    /// callers disambiguate them by position.
    pub fn label(&self) -> String {
        match self {
            UtilitySpec::TopClass {} => "top_class".into(),
            UtilitySpec::ClassWise { c } => format!("class_wise:{c}"),
            UtilitySpec::TopK { k } => format!("top_k:{k}"),
            UtilitySpec::Dcg { gamma } => format!("dcg:{gamma}"),
            UtilitySpec::Rank { .. } => "rank".into(),
            UtilitySpec::Linear { .. } => "linear".into(),
            UtilitySpec::Decision { .. } => "decision".into(),
            UtilitySpec::GainMatrix { .. } => "gain_matrix".into(),
            UtilitySpec::Similarity { .. } => "similarity".into(),
        }
    }

    /// Whether [`label`](Self::label) identifies the spec uniquely.
    pub fn has_unique_label(&self) -> bool {
        matches!(
            self,
            UtilitySpec::TopClass {} | UtilitySpec::ClassWise { .. } | UtilitySpec::TopK { .. } | UtilitySpec::Dcg { .. }
        )
    }

    /// Checks parameter ranges and, when `classes` is given, dimensions.
    pub fn check(&self, classes: usize) -> Result<()> {
        let in_unit = |xs: &[f64], name: &str| -> Result<()> {
            if xs.iter().all(|x| (-1.0..=1.0).contains(x)) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} entries must lie in [-1, 1]")))
            }
        };
        let square = |m: &[Vec<f64>], name: &str| -> Result<()> {
            if m.len() != classes || m.iter().any(|r| r.len() != classes) {
                return Err(Error::domain(format!("{name} must be {classes} x {classes}")));
            }
            Ok(())
        };
        match self {
            UtilitySpec::TopClass {} => Ok(()),
            UtilitySpec::ClassWise { c } if *c < classes => Ok(()),
            UtilitySpec::ClassWise { c } => Err(Error::domain(format!("class {c} out of range for C={classes}"))),
            UtilitySpec::TopK { k } if (1..=classes).contains(k) => Ok(()),
            UtilitySpec::TopK { k } => Err(Error::domain(format!("top-k with k={k} outside 1..={classes}"))),
            UtilitySpec::Rank { theta } => {
                if theta.len() != classes {
                    return Err(Error::domain(format!("theta has length {}, expected {classes}", theta.len())));
                }
                in_unit(theta, "theta")
            }
            UtilitySpec::Linear { a } => {
                if a.len() != classes {
                    return Err(Error::domain(format!("a has length {}, expected {classes}", a.len())));
                }
                in_unit(a, "a")
            }
            UtilitySpec::Dcg { gamma } if *gamma > 0.0 && gamma.is_finite() => Ok(()),
            UtilitySpec::Dcg { gamma } => Err(Error::domain(format!("dcg gamma must be positive, got {gamma}"))),
            UtilitySpec::Decision { loss } => {
                if loss.len() != classes || loss.iter().any(|r| r.len() != loss[0].len()) || loss[0].is_empty() {
                    return Err(Error::domain(format!("loss must be {classes} x K with K >= 1")));
                }
                in_unit(&loss.concat(), "loss")
            }
            UtilitySpec::GainMatrix { gain } => {
                square(gain, "gain")?;
                if gain.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::domain("gain entries must lie in [0, 1]"));
                }
                if (0..classes).any(|i| gain[i][i] != 1.0) {
                    return Err(Error::domain("gain matrix needs a unit diagonal"));
                }
                Ok(())
            }
            UtilitySpec::Similarity { sim } => {
                square(sim, "sim")?;
                in_unit(&sim.concat(), "sim")?;
                if (0..classes).any(|i| sim[i][i] != 1.0) {
                    return Err(Error::domain("similarity matrix needs a unit diagonal"));
                }
                Ok(())
            }
        }
    }

    /// Dimension-only check, cheap enough to run per row.
    fn check_dim(&self, classes: usize) -> Result<()> {
        let ok = match self {
            UtilitySpec::TopClass {} | UtilitySpec::Dcg { .. } => true,
            UtilitySpec::ClassWise { c } => *c < classes,
            UtilitySpec::TopK { k } => (1..=classes).contains(k),
            UtilitySpec::Rank { theta } => theta.len() == classes,
            UtilitySpec::Linear { a } => a.len() == classes,
            UtilitySpec::Decision { loss } => {
                loss.len() == classes && !loss[0].is_empty() && loss.iter().all(|r| r.len() == loss[0].len())
            }
            UtilitySpec::GainMatrix { gain: m } | UtilitySpec::Similarity { sim: m } => {
                m.len() == classes && m.iter().all(|r| r.len() == classes)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("utility {} does not match C={classes}", self.label())))
        }
    }

    /// Evaluates `ū(p)` and `v_u(p)`.
    pub fn eval(&self, p: &[f64]) -> Result<UtilityEvaluation> {
        let mut uvec = vec![0.0; p.len()];
        let v = self.eval_into(p, &mut uvec)?;
        Ok(UtilityEvaluation { uvec, v })
    }

    /// Writes `ū(p)` into `uvec` (length `C`) and returns `v_u(p)`.
    pub fn eval_into(&self, p: &[f64], uvec: &mut [f64]) -> Result<f64> {
        let classes = p.len();
        self.check_dim(classes)?;
        debug_assert_eq!(uvec.len(), classes);
        match self {
            UtilitySpec::TopClass {} => {
                uvec.fill(0.0);
                uvec[argmax(p.iter().copied())] = 1.0;
            }
            UtilitySpec::ClassWise { c } => {
                uvec.fill(0.0);
                uvec[*c] = 1.0;
            }
            UtilitySpec::TopK { k } => {
                uvec.fill(0.0);
                for &j in sorted_classes(p).iter().take(*k) {
                    uvec[j] = 1.0;
                }
            }
            UtilitySpec::Rank { theta } => fill_rank(p, theta, uvec),
            UtilitySpec::Dcg { gamma } => fill_rank(p, &dcg_discounts(classes, *gamma), uvec),
            UtilitySpec::Linear { a } => uvec.copy_from_slice(a),
            UtilitySpec::Decision { loss } => {
                let actions = loss[0].len();
                let expected = (0..actions).map(|a| loss.iter().zip(p).map(|(row, pi)| pi * row[a]).sum::<f64>());
                // argmin of expected loss == argmax of its negation
                let best = argmax(expected.map(|x| -x));
                for (u, row) in uvec.iter_mut().zip(loss) {
                    *u = -row[best];
                }
            }
            UtilitySpec::GainMatrix { gain } => {
                let scores = (0..classes).map(|j| gain.iter().zip(p).map(|(row, pi)| pi * row[j]).sum::<f64>());
                let best = argmax(scores);
                for (u, row) in uvec.iter_mut().zip(gain) {
                    *u = row[best];
                }
            }
            UtilitySpec::Similarity { sim } => {
                for (j, u) in uvec.iter_mut().enumerate() {
                    *u = sim.iter().zip(p).map(|(row, pi)| pi * row[j]).sum();
                }
            }
        }
        Ok(dot(p, uvec))
    }
}

fn fill_rank(p: &[f64], theta: &[f64], uvec: &mut [f64]) {
    for (pos, j) in sorted_classes(p).into_iter().enumerate() {
        uvec[j] = theta[pos];
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Uniform draw on the boundary of the cube `[-1, 1]^C`: a face (coordinate
/// and sign) uniformly among the `2C` faces, the rest uniform on `[-1, 1]`.
pub fn sample_cube_boundary(classes: usize, rng: &mut impl Rng) -> Vec<f64> {
    let face = rng.gen_range(0..2 * classes);
    let mut a: Vec<f64> = (0..classes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    a[face / 2] = if face % 2 == 0 { 1.0 } else { -1.0 };
    a
}

pub fn sample_linear(classes: usize, rng: &mut impl Rng) -> UtilitySpec {
    UtilitySpec::Linear { a: sample_cube_boundary(classes, rng) }
}

/// A cube-boundary draw sorted into non-increasing order.
pub fn sample_rank(classes: usize, rng: &mut impl Rng) -> UtilitySpec {
    UtilitySpec::Rank { theta: sort_non_increasing(sample_cube_boundary(classes, rng)) }
}

fn sort_non_increasing(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(|a, b| b.total_cmp(a));
    xs
}

/// Loss matrix with `C x K` entries i.i.d. uniform on `[-1, 1]`.
pub fn sample_decision(classes: usize, actions: usize, rng: &mut impl Rng) -> Result<UtilitySpec> {
    if actions < 2 {
        return Err(Error::domain(format!("decision utilities need K >= 2 actions, got {actions}")));
    }
    let loss = (0..classes)
        .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    Ok(UtilitySpec::Decision { loss })
}

/// Gain matrix for users with low error tolerance: unit diagonal,
/// off-diagonal entries i.i.d. uniform on `(0, 0.1)`.
pub fn gain_matrix_aligned(classes: usize, rng: &mut impl Rng) -> UtilitySpec {
    let gain = (0..classes)
        .map(|i| {
            (0..classes)
                .map(|j| {
                    if i == j {
                        return 1.0;
                    }
                    loop {
                        let x: f64 = rng.gen_range(0.0..0.1);
                        if x > 0.0 {
                            break x;
                        }
                    }
                })
                .collect()
        })
        .collect();
    UtilitySpec::GainMatrix { gain }
}

/// Gain matrix of a specialist in `block`: unit diagonal, 0.2 in every
/// off-diagonal column belonging to the block, 0 elsewhere.
pub fn gain_matrix_specialist(classes: usize, block: &[usize]) -> Result<UtilitySpec> {
    if let Some(&j) = block.iter().find(|&&j| j >= classes) {
        return Err(Error::domain(format!("class {j} out of range for C={classes}")));
    }
    let mut gain = vec![vec![0.0; classes]; classes];
    for (i, row) in gain.iter_mut().enumerate() {
        for &j in block {
            row[j] = 0.2;
        }
        row[i] = 1.0;
    }
    Ok(UtilitySpec::GainMatrix { gain })
}

/// Draws a specialist uniformly from the disjoint blocks of `partition`.
pub fn gain_matrix_misaligned(classes: usize, partition: &[Vec<usize>], rng: &mut impl Rng) -> Result<UtilitySpec> {
    if partition.is_empty() {
        return Err(Error::domain("partition has no blocks"));
    }
    let mut seen = vec![false; classes];
    for &j in partition.iter().flatten() {
        if j >= classes {
            return Err(Error::domain(format!("class {j} out of range for C={classes}")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::domain(format!("class {j} appears in more than one block")));
        }
    }
    gain_matrix_specialist(classes, &partition[rng.gen_range(0..partition.len())])
}

/// Class-wise utilities for every class followed by top-K for every K.
pub fn comb_pool(classes: usize) -> Vec<UtilitySpec> {
    (0..classes)
        .map(|c| UtilitySpec::ClassWise { c })
        .chain((1..=classes).map(|k| UtilitySpec::TopK { k }))
        .collect()
}

pub fn dcg_pool() -> Vec<UtilitySpec> {
    DCG_GAMMA_GRID.iter().map(|&gamma| UtilitySpec::Dcg { gamma }).collect()
}

/// Draws a utility from a random family (all nine families equally likely)
/// with random parameters. Used for randomized equivalence checks.
pub fn sample_any(classes: usize, rng: &mut impl Rng) -> UtilitySpec {
    match rng.gen_range(0..9) {
        0 => UtilitySpec::TopClass {},
        1 => UtilitySpec::ClassWise { c: rng.gen_range(0..classes) },
        2 => UtilitySpec::TopK { k: rng.gen_range(1..=classes) },
        3 => sample_rank(classes, rng),
        4 => sample_linear(classes, rng),
        5 => UtilitySpec::Dcg { gamma: DCG_GAMMA_GRID[rng.gen_range(0..DCG_GAMMA_GRID.len())] },
        6 => {
            let actions = rng.gen_range(2..5);
            let loss = (0..classes)
                .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..=1.0)).collect())
                .collect();
            UtilitySpec::Decision { loss }
        }
        7 => gain_matrix_aligned(classes, rng),
        _ => {
            let mut sim = vec![vec![0.0; classes]; classes];
            for i in 0..classes {
                sim[i][i] = 1.0;
                for j in 0..i {
                    let x = rng.gen_range(-1.0..=1.0);
                    sim[i][j] = x;
                    sim[j][i] = x;
                }
            }
            UtilitySpec::Similarity { sim }
        }
    }
}

/// Sampled utility classes for distributional evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Rank,
}

impl Family {
    pub fn sample(self, classes: usize, rng: &mut impl Rng) -> UtilitySpec {
        match self {
            Family::Linear => sample_linear(classes, rng),
            Family::Rank => sample_rank(classes, rng),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Rank => "rank",
        }
    }
}

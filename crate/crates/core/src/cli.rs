//! `utilcal` command-line interface.
//!
//! Exit codes: 0 success, 1 failed check (oracle-check), 2 domain or
//! validation error, 3 I/O or parse error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{gen_calibrated, gen_miscalibrated, gen_two_point, validate, FiniteDistribution, LabeledPredictions};
use crate::ecdf::{ecdf_evaluate, EcdfResult};
use crate::error::{Error, Result};
use crate::estimators::{evaluate, oracle_check, BinKind, BinScheme, ClassWeights};
use crate::io;
use crate::patching::{fit, transform_matrix, Augment, PatchConfig, PatchSequence, StepRule};
use crate::utilities::{comb_pool, dcg_pool, Family, UtilitySpec};

#[derive(Debug, Parser)]
#[command(name = "utilcal", version, about = "Utility calibration metrics, eCDFs and patching")]
struct Cli {
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a prediction matrix and labels; print a validation report.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        /// Report JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the renormalized matrix here (with --renormalize).
        #[arg(long)]
        corrected: Option<PathBuf>,
    },
    /// Accuracy, Brier score, binned errors and worst-interval errors.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = BinKind::EqualWeight)]
        bin_kind: BinKind,
        #[arg(long, value_enum, default_value_t = ClassWeights::Uniform)]
        class_weights: ClassWeights,
        /// Utility keyword or UtilitySpec JSON path; repeatable.
        #[arg(long)]
        utility: Vec<String>,
        /// Report JSON (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical CDF of errors over sampled utilities.
    Ecdf {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long, default_value_t = 1500)]
        m: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV with columns error,cdf.
        #[arg(long)]
        out: PathBuf,
        /// Sidecar JSON (default: the CSV path with a .json extension).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Record the sampled utilities in the sidecar.
        #[arg(long)]
        keep_utilities: bool,
    },
    /// Fit a patch sequence on calibration data.
    PatchFit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, value_enum, default_value_t = StepRuleArg::Theoretical)]
        step_rule: StepRuleArg,
        /// Fresh linear/rank utilities sampled per iteration, added to the pool.
        #[arg(long)]
        augment: Option<usize>,
        /// Pool utilities (default: comb).
        #[arg(long)]
        utility: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// PatchSequence JSON.
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration CSV with columns iteration,err,brier.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Apply a fitted patch sequence to a prediction matrix.
    PatchApply {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        renormalize: bool,
    },
    /// Write a synthetic dataset and its population law.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Rows per group (two-point).
        #[arg(long, default_value_t = 20)]
        n_per_group: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        support: usize,
        /// FiniteDistribution JSON (miscalibrated).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for preds.csv, labels.csv and population.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the fast estimator against brute force on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        n_max: usize,
        #[arg(long, default_value_t = 8)]
        c_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Skip one header line in each CSV.
    #[arg(long)]
    header: bool,
    /// Clamp to [0, 1] and rescale rows to sum to one.
    #[arg(long)]
    renormalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StepRuleArg {
    Theoretical,
    Armijo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    TwoPoint,
    Calibrated,
    Miscalibrated,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(data: &DataArgs) -> Result<LabeledPredictions> {
    let preds = io::read_predictions(&data.preds, &data.labels, data.header)?;
    let report = validate(&preds, data.renormalize)?;
    Ok(report.corrected.unwrap_or(preds))
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(path) => io::write_text(path, &format!("{json}\n")),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

/// Resolves `--utility` values. Keywords: `top_class`, `class_wise[:c]`,
/// `top_k[:k]`, `comb`, `dcg[:gamma]`; anything else is read as a JSON file
/// holding one UtilitySpec or an array of them.
fn resolve_utilities(args: &[String], classes: usize) -> Result<Vec<UtilitySpec>> {
    let mut out = Vec::new();
    for arg in args {
        let (name, param) = match arg.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (arg.as_str(), None),
        };
        let bad = || Error::Config(format!("bad utility parameter in {arg:?}"));
        match (name, param) {
            ("top_class", None) => out.push(UtilitySpec::TopClass {}),
            ("class_wise", None) => out.extend((0..classes).map(|c| UtilitySpec::ClassWise { c })),
            ("class_wise", Some(p)) => out.push(UtilitySpec::ClassWise { c: p.parse().map_err(|_| bad())? }),
            ("top_k", None) => out.extend((1..=classes).map(|k| UtilitySpec::TopK { k })),
            ("top_k", Some(p)) => out.push(UtilitySpec::TopK { k: p.parse().map_err(|_| bad())? }),
            ("comb", None) => out.extend(comb_pool(classes)),
            ("dcg", None) => out.extend(dcg_pool()),
            ("dcg", Some(p)) => out.push(UtilitySpec::Dcg { gamma: p.parse().map_err(|_| bad())? }),
            _ => {
                let value: serde_json::Value = io::read_json(Path::new(arg))?;
                let parsed = if value.is_array() {
                    serde_json::from_value::<Vec<UtilitySpec>>(value)
                } else {
                    serde_json::from_value::<UtilitySpec>(value).map(|s| vec![s])
                };
                out.extend(parsed.map_err(|source| Error::Json { path: PathBuf::from(arg), source })?);
            }
        }
    }
    for s in &out {
        s.check(classes)?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct EcdfSidecar<'a> {
    family: Family,
    #[serde(rename = "M")]
    m: usize,
    seed: u64,
    band_halfwidth: f64,
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    utilities: Option<&'a Vec<UtilitySpec>>,
}

fn ecdf_csv(result: &EcdfResult) -> String {
    let mut s = String::from("error,cdf\n");
    for (e, c) in result.rows() {
        let _ = writeln!(s, "{e:?},{c:?}");
    }
    s
}

fn history_csv(seq: &PatchSequence) -> String {
    let mut s = String::from("iteration,err,brier\n");
    for h in &seq.history {
        let _ = writeln!(s, "{},{:?},{:?}", h.iteration, h.err, h.brier_after);
    }
    s
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Validate { data, out, corrected } => {
            let preds = io::read_predictions(&data.preds, &data.labels, data.header)?;
            let report = validate(&preds, data.renormalize)?;
            if let (Some(path), Some(fixed)) = (&corrected, &report.corrected) {
                io::write_probs(path, fixed.probs(), fixed.classes())?;
            }
            emit(out.as_deref(), &io::to_json_string(&report))?;
        }
        Command::Evaluate { data, bins, bin_kind, class_weights, utility, out } => {
            let preds = load(&data)?;
            let scheme = BinScheme::new(bin_kind, bins)?;
            let utilities = resolve_utilities(&utility, preds.classes())?;
            let weights = class_weights.weights(&preds);
            let report = evaluate(&preds, &scheme, &weights, &utilities)?;
            emit(out.as_deref(), &io::to_json_string(&report))?;
        }
        Command::Ecdf { data, family, m, delta, seed, out, sidecar, keep_utilities } => {
            let preds = load(&data)?;
            let result = ecdf_evaluate(&preds, family, m, seed, keep_utilities)?.with_band(delta)?;
            let sidecar_path = sidecar.unwrap_or_else(|| io::sibling(&out, "json"));
            if sidecar_path == out {
                return Err(Error::Config("sidecar path would overwrite the eCDF CSV".into()));
            }
            io::write_text(&out, &ecdf_csv(&result))?;
            let meta = EcdfSidecar {
                family,
                m,
                seed,
                band_halfwidth: result.band_halfwidth.expect("band attached"),
                delta,
                utilities: result.utilities.as_ref(),
            };
            io::write_json(&sidecar_path, &meta)?;
        }
        Command::PatchFit { data, epsilon, max_iters, step_rule, augment, utility, seed, out, history } => {
            let preds = load(&data)?;
            let mut config = PatchConfig::new(preds.classes(), epsilon);
            if !utility.is_empty() {
                config.pool = resolve_utilities(&utility, preds.classes())?;
            }
            config.max_iters = max_iters;
            config.step_rule = match step_rule {
                StepRuleArg::Theoretical => StepRule::Theoretical,
                StepRuleArg::Armijo => StepRule::armijo(),
            };
            config.augment = augment.map(|count| Augment { families: vec![Family::Linear, Family::Rank], count, seed });
            let seq = fit(&preds, &config)?;
            io::write_json(&out, &seq)?;
            if let Some(path) = history {
                io::write_text(&path, &history_csv(&seq))?;
            }
        }
        Command::PatchApply { preds, patches, out, header, renormalize } => {
            let (probs, classes) = io::read_probs(&preds, header)?;
            let rows = probs.len() / classes;
            let data = LabeledPredictions::new(probs, vec![0; rows], classes)?;
            let data = validate(&data, renormalize)?.corrected.unwrap_or(data);
            let seq: PatchSequence = io::read_json(&patches)?;
            let patched = transform_matrix(data.probs(), classes, &seq)?;
            io::write_probs(&out, &patched, classes)?;
        }
        Command::Synth { kind, n_per_group, n, classes, support, spec, seed, out } => {
            let (preds, population) = match kind {
                SynthKind::TwoPoint => {
                    (gen_two_point(n_per_group)?, crate::dataset::two_point_population())
                }
                SynthKind::Calibrated => gen_calibrated(n, classes, support, seed)?,
                SynthKind::Miscalibrated => {
                    let path = spec.ok_or_else(|| Error::Config("miscalibrated synthesis needs --spec".into()))?;
                    let dist: FiniteDistribution = io::read_json(&path)?;
                    gen_miscalibrated(&dist, n, seed)?
                }
            };
            io::write_probs(&out.join("preds.csv"), preds.probs(), preds.classes())?;
            io::write_labels(&out.join("labels.csv"), preds.labels())?;
            io::write_json(&out.join("population.json"), &population)?;
        }
        Command::OracleCheck { trials, n_max, c_max, seed, out, inject_fault } => {
            let report = oracle_check(trials, n_max, c_max, seed, inject_fault)?;
            if let Some(path) = &out {
                io::write_json(path, &report)?;
            }
            for f in &report.failures {
                eprintln!(
                    "FAIL trial {} (seed {}, n={}, C={}): fast {:?} vs oracle {:?}",
                    f.trial, f.seed, f.n, f.classes, f.fast, f.oracle
                );
            }
            println!(
                "{}: {} trials, {} failures, max |diff| {:e}",
                if report.passed() { "PASS" } else { "FAIL" },
                report.trials,
                report.failures.len(),
                report.max_abs_diff
            );
            return Ok(if report.passed() { 0 } else { 1 });
        }
    }
    Ok(0)
}

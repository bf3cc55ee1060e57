//! Utility calibration: worst-interval calibration errors for decision
//! utilities, binned baselines, eCDFs over sampled utility classes, and
//! iterative patching of predictors.

pub mod cli;
pub mod dataset;
pub mod ecdf;
pub mod error;
pub mod estimators;
pub mod io;
pub mod numeric;
pub mod patching;
pub mod utilities;

pub use dataset::{FiniteDistribution, LabeledPredictions};
pub use error::{Error, Result};
pub use utilities::{Family, UtilitySpec};

//! Estimation engine and simulation laboratory for principal-stratum causal
//! effects in cluster-randomized trials with noncompliance.
//!
//! The library identifies and estimates network assignment effects (NAE),
//! individual compliance effects (ICE), and principal causal effects (PCE)
//! within compliance-defined strata, using moment, doubly robust, and
//! cross-fitted nonparametric-efficient estimators with cluster-level
//! inference, plus a principal-ignorability sensitivity framework and a
//! Monte Carlo simulation harness.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod expr;
pub mod inference;
pub mod nuisance;
pub mod report;
pub mod score;
pub mod sensitivity;
pub mod sim;

pub use data::{
    build_features, eval_weight, load_csv, write_csv, Cluster, CsvSchema, FeatureSummary,
    TrialDataset, WeightSpec,
};
pub use error::{Error, Result};
pub use estimators::{assemble_effects, itt_estimate, theta_dr, theta_mo, theta_np, Effect};
pub use score::{MonotonicityMode, Stratum, StratumScheme};

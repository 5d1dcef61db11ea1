//! Crate-wide error type.

use thiserror::Error;

/// Errors produced across data ingestion, model fitting, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("non-binary value `{value}` in column `{column}` at row {row}")]
    NonBinary {
        column: String,
        value: String,
        row: usize,
    },
    #[error("column `{column}` is not constant within cluster `{cluster}`")]
    InconsistentClusterConstant { column: String, cluster: String },
    #[error("input file contains no data rows")]
    EmptyFile,
    #[error("individual index {index} out of range for cluster of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("custom weight evaluated to non-positive value {0}")]
    NonPositiveWeight(f64),
    #[error("design matrix is singular or rank-deficient")]
    SingularDesign,
    #[error("need at least {needed} clusters, found {found}")]
    TooFewClusters { needed: usize, found: usize },
    #[error("fold {fold} has a degenerate training complement: {reason}")]
    FoldDegenerate { fold: usize, reason: String },
    #[error("estimated stratum mass in denominator is {0} (below guard 1e-8)")]
    ZeroDenominator(f64),
    #[error("dataset is missing clusters in arm {arm}")]
    ArmMissing { arm: u8 },
    #[error("stratum `{0}` is unavailable under the requested monotonicity mode")]
    StratumUnavailable(String),
    #[error("{found} bootstrap replicates are insufficient (need at least {needed})")]
    InsufficientReplicates { needed: usize, found: usize },
    #[error("{failed} of {total} bootstrap replicates failed (above 10% threshold)")]
    TooManyFailedReplicates { failed: usize, total: usize },
    #[error("contrast mixes cells from different strata")]
    MixedStrata,
    #[error("sensitivity weight denominator is non-positive ({value}) at individual {individual} of cluster `{cluster}`")]
    NonPositiveDenominator {
        value: f64,
        cluster: String,
        individual: usize,
    },
    #[error("cell ({a},{a_star}) is not valid for stratum `{stratum}`")]
    InvalidCell { stratum: String, a: u8, a_star: u8 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Machine-readable run artifacts: estimate reports, reproducibility
//! manifests, and CSV table writers.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::sensitivity::GridRow;
use crate::sim::{MCRow, ReplicateEstimate};

/// Confidence interval record attached to an estimate.
#[derive(Debug, Clone, Serialize)]
pub struct CiRecord {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// "wald" or "percentile".
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_dropped: Option<usize>,
}

/// One reported estimand.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimand: String,
    /// "mo", "dr", or "np".
    pub method: String,
    pub point: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<CiRecord>,
    pub diagnostics: ReportDiagnostics,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ReportDiagnostics {
    /// Principal scores floored at zero during plug-in averaging.
    pub floored_scores: usize,
    /// Whether any logistic fit hit the separation bound.
    pub separation_flag: bool,
    /// Seed driving fold assignment (np only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_seed: Option<u64>,
}

/// Reproducibility manifest accompanying every output directory. Rerunning
/// the recorded command with the resolved config reproduces all outputs
/// byte-identically.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the resolved config as written to config.toml.
    pub config_sha256: String,
    pub outputs: Vec<String>,
}

pub fn config_hash(resolved_toml: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(resolved_toml.as_bytes());
    format!("{:x}", hasher.finalize())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the Monte Carlo summary table.
pub fn write_results_csv(path: &Path, rows: &[MCRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario", "estimator", "estimand", "truth", "mc_mean", "bias", "sd", "mean_se",
        "coverage", "n_success", "failures",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.method.label().to_string(),
            r.estimand.clone(),
            r.truth.to_string(),
            r.mc_mean.to_string(),
            r.bias.to_string(),
            r.sd.to_string(),
            opt(r.mean_se),
            opt(r.coverage),
            r.n_success.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-replicate estimates for external plotting.
pub fn write_replicates_csv(path: &Path, rows: &[ReplicateEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rep", "estimator", "estimand", "estimate", "se", "ci_lo", "ci_hi"])?;
    for r in rows {
        w.write_record([
            r.rep.to_string(),
            r.method.label().to_string(),
            r.estimand.clone(),
            r.estimate.to_string(),
            r.se.map(|v| v.to_string()).unwrap_or_default(),
            r.ci.map(|(lo, _)| lo.to_string()).unwrap_or_default(),
            r.ci.map(|(_, hi)| hi.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the long-format sensitivity grid.
pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "alpha", "beta", "gamma", "estimand", "estimate", "se", "ci_lo", "ci_hi",
    ])?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.beta.to_string(),
            r.gamma.to_string(),
            r.estimand.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cluster EIF contributions for audit.
#[derive(Debug, Clone, Serialize)]
pub struct EifAuditRow {
    pub cluster_id: String,
    pub stratum: String,
    pub cell_a: u8,
    pub cell_a_star: u8,
    pub psi1: f64,
    pub psi2: f64,
}

pub fn write_eif_audit_csv(path: &Path, rows: &[EifAuditRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cluster_id", "stratum", "a", "a_star", "psi1", "psi2"])?;
    for r in rows {
        w.write_record([
            r.cluster_id.clone(),
            r.stratum.clone(),
            r.cell_a.to_string(),
            r.cell_a_star.to_string(),
            r.psi1.to_string(),
            r.psi2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

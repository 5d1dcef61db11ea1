//! Cluster-level bootstrap inference: percentile confidence interval for the
//! intention-to-treat effect, resampling whole clusters with replacement.
//!
//! Usage: cargo run --release --example bootstrap_inference

use cluster_compliance::inference::{cluster_bootstrap, percentile_ci, BootstrapConfig};
use cluster_compliance::sim::{generate_trial, DGPConfig};
use cluster_compliance::{itt_estimate, Result, WeightSpec};

fn main() -> Result<()> {
    let (dataset, _) = generate_trial(
        &DGPConfig {
            k: 150,
            ..DGPConfig::default()
        },
        33,
    )?;
    let weight = WeightSpec::ClusterAverage;
    let point = itt_estimate(&dataset, &weight)?;

    let cfg = BootstrapConfig {
        b: 1000,
        level: 0.95,
        seed: 99,
    };
    let dist = cluster_bootstrap(
        |resample, _seed| itt_estimate(resample, &weight),
        &dataset,
        &cfg,
    )?;
    let (lo, hi) = percentile_ci(&dist.values, cfg.level)?;

    println!("ITT estimate: {point:.4}");
    println!(
        "95% percentile CI [{lo:.4}, {hi:.4}]  ({} replicates, {} dropped)",
        dist.values.len(),
        dist.failures
    );
    Ok(())
}

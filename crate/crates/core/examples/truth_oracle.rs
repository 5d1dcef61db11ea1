//! Evaluates the estimand truths on a large simulated super population with
//! known potential outcomes, reporting Monte Carlo standard errors.
//!
//! Usage: cargo run --release --example truth_oracle [-- <population_clusters>]

use cluster_compliance::sim::{truth_oracle, DGPConfig};
use cluster_compliance::{Result, WeightSpec};

fn main() -> Result<()> {
    let population = std::env::args()
        .nth(1)
        .map_or(50_000, |s| s.parse().expect("population"));
    let truth = truth_oracle(
        &DGPConfig::default(),
        population,
        2024,
        &WeightSpec::ClusterAverage,
    )?;
    println!("population: {} clusters", truth.population_size);
    for (estimand, (value, mc_se)) in &truth.estimands {
        println!("{estimand:16} {value:10.5}  (mc se {mc_se:.5})");
    }
    Ok(())
}

//! Generates a synthetic cluster-randomized trial and writes it to CSV.
//!
//! Usage: cargo run --example generate_data [-- <path> [k] [seed]]

use cluster_compliance::sim::{generate_trial, DGPConfig};
use cluster_compliance::{write_csv, Result};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(String::as_str).unwrap_or("trial.csv");
    let k = args.get(2).map_or(100, |s| s.parse().expect("k"));
    let seed = args.get(3).map_or(42, |s| s.parse().expect("seed"));

    let cfg = DGPConfig {
        k,
        seed,
        ..DGPConfig::default()
    };
    let (dataset, latents) = generate_trial(&cfg, seed)?;
    write_csv(&dataset, path)?;

    let n_compliers: usize = latents
        .iter()
        .flat_map(|l| l.d1.iter().zip(&l.d0))
        .filter(|(d1, d0)| **d1 == 1 && **d0 == 0)
        .count();
    println!(
        "wrote {} clusters / {} individuals to {path} ({} latent compliers)",
        dataset.n_clusters(),
        dataset.n_individuals(),
        n_compliers
    );
    Ok(())
}

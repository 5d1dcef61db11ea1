//! End-to-end analysis of a trial dataset: moment, doubly robust, and
//! cross-fitted nonparametric-efficient estimates of the complier and
//! never-taker effects, with cluster-level inference.
//!
//! Usage: cargo run --release --example analyze_trial [-- <trial.csv>]

use cluster_compliance::estimators::{assemble_effects, np_components, theta_dr, theta_mo, Effect};
use cluster_compliance::inference::{conservative_contrast_variance, wald_ci};
use cluster_compliance::nuisance::{cross_fit, fit_full, make_folds, FeatureTable, NuisanceSpec};
use cluster_compliance::nuisance::FittedNuisance;
use cluster_compliance::sim::{generate_trial, DGPConfig};
use cluster_compliance::{
    load_csv, CsvSchema, FeatureSummary, MonotonicityMode, Result, Stratum, StratumScheme,
    TrialDataset, WeightSpec,
};
use std::collections::BTreeMap;

type ThetaFn = fn(
    Stratum,
    (u8, u8),
    &TrialDataset,
    &FeatureTable,
    &FittedNuisance,
    &WeightSpec,
    MonotonicityMode,
) -> Result<f64>;

fn main() -> Result<()> {
    let dataset = match std::env::args().nth(1) {
        Some(path) => load_csv(path, &CsvSchema::default(), 0.5)?,
        None => {
            generate_trial(
                &DGPConfig {
                    k: 200,
                    ..DGPConfig::default()
                },
                7,
            )?
            .0
        }
    };
    let features = FeatureTable::build(&dataset, FeatureSummary::Own)?;
    let weight = WeightSpec::ClusterAverage;
    let mode = MonotonicityMode::Standard;
    let spec = NuisanceSpec::glm();

    // parametric estimators on the full-data fit
    let fit = fit_full(&dataset, &features, &spec, 0)?;
    for g in [Stratum::Co, Stratum::Nt] {
        let methods: [(&str, ThetaFn); 2] = [("mo", theta_mo), ("dr", theta_dr)];
        for (name, theta) in methods {
            let mut thetas = BTreeMap::new();
            for &cell in StratumScheme::for_stratum(g).valid_cells() {
                thetas.insert(cell, theta(g, cell, &dataset, &features, &fit, &weight, mode)?);
            }
            for (effect, value) in assemble_effects(g, &thetas, mode)? {
                println!("{:8} {name:3} {value:9.4}", effect.estimand(g));
            }
        }
    }

    // cross-fitted estimator with influence-function standard errors
    let folds = make_folds(&dataset, 5, 1)?;
    let fits = cross_fit(&dataset, &features, &spec, &folds, 2)?;
    for g in [Stratum::Co, Stratum::Nt] {
        let mut comps = BTreeMap::new();
        let mut thetas = BTreeMap::new();
        for &cell in StratumScheme::for_stratum(g).valid_cells() {
            let c = np_components(g, cell, &dataset, &features, &fits, &weight, mode)?;
            thetas.insert(cell, c.theta()?);
            comps.insert(cell, c);
        }
        let contrasts: &[(Effect, &[((u8, u8), f64)])] = if g == Stratum::Co {
            &[
                (Effect::Ice, &[((1, 1), 1.0), ((1, 0), -1.0)]),
                (Effect::Nae, &[((1, 0), 1.0), ((0, 0), -1.0)]),
                (Effect::Pce, &[((1, 1), 1.0), ((0, 0), -1.0)]),
            ]
        } else {
            &[
                (Effect::Nae, &[((1, 0), 1.0), ((0, 0), -1.0)]),
                (Effect::Pce, &[((1, 0), 1.0), ((0, 0), -1.0)]),
            ]
        };
        for (effect, cells) in contrasts {
            let refs: Vec<_> = cells.iter().map(|(c, _)| &comps[c]).collect();
            let ts: Vec<f64> = cells.iter().map(|(c, _)| thetas[c]).collect();
            let ls: Vec<f64> = cells.iter().map(|(_, l)| *l).collect();
            let est: f64 = ts.iter().zip(&ls).map(|(t, l)| t * l).sum();
            let se = conservative_contrast_variance(&refs, &ts, &ls)?.sqrt();
            let (lo, hi) = wald_ci(est, se, 0.95);
            println!(
                "{:8} np  {est:9.4}  se {se:.4}  95% CI [{lo:.4}, {hi:.4}]",
                effect.estimand(g)
            );
        }
    }
    Ok(())
}

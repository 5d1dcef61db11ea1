//! Stratum-specific mean estimators theta_g(a, a*) and their assembly into
//! ICE/NAE/PCE contrasts.
//!
//! Three estimators share the same target: a moment (plug-in) estimator, a
//! doubly robust estimator built from the efficient influence function with
//! full-data parametric nuisances, and a cross-fitted nonparametric-efficient
//! estimator whose influence-function variance gives a closed-form standard
//! error. All three are ratios of weighted cluster-level sums; the reported
//! point estimate exactly zeroes the empirical weighted mean of
//! psi1 - psi2 * theta.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{eval_weight, TrialDataset, WeightSpec};
use crate::error::{Error, Result};
use crate::nuisance::{cross_fit, make_folds, CrossFitted, FeatureTable, FittedNuisance, NuisanceSpec};
use crate::score::{check_available, principal_score_raw, MonotonicityMode, Stratum, StratumScheme};

/// Guard below which an estimated stratum mass is treated as zero.
pub const DENOMINATOR_GUARD: f64 = 1e-8;

/// Default fold count for the cross-fitted estimator.
pub const DEFAULT_FOLDS: usize = 5;

/// Assembled stratum-level contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// Individual compliance effect: effect through one's own uptake.
    Ice,
    /// Network assignment effect: effect of cluster assignment at fixed
    /// uptake.
    Nae,
    /// Principal causal effect: total effect within the stratum.
    Pce,
}

impl Effect {
    pub fn label(self) -> &'static str {
        match self {
            Effect::Ice => "ICE",
            Effect::Nae => "NAE",
            Effect::Pce => "PCE",
        }
    }

    /// Estimand identifier such as "ICE_co".
    pub fn estimand(self, g: Stratum) -> String {
        format!("{}_{}", self.label(), g.label())
    }
}

/// Cluster-level influence-function contributions for one (stratum, cell).
///
/// `psi1_cluster[i]` and `psi2_cluster[i]` hold (W_i/N_i) * sum_j psi of the
/// individual components; psi2 depends only on the stratum, not the cell.
#[derive(Debug, Clone)]
pub struct EifComponents {
    pub psi1_cluster: Vec<f64>,
    pub psi2_cluster: Vec<f64>,
    /// (1/K) sum_i psi2_cluster[i]; estimates E[(W/N) sum_j e_g].
    pub denominator_hat: f64,
}

impl EifComponents {
    /// The ratio estimate; errors when the estimated stratum mass is at or
    /// below the guard.
    pub fn theta(&self) -> Result<f64> {
        if self.denominator_hat <= DENOMINATOR_GUARD {
            return Err(Error::ZeroDenominator(self.denominator_hat));
        }
        let k = self.psi1_cluster.len() as f64;
        let numerator: f64 = self.psi1_cluster.iter().sum::<f64>() / k;
        Ok(numerator / self.denominator_hat)
    }
}

/// psi2 component of the EIF for stratum membership:
/// I(A=a-dagger)(I(D=d-dagger) - p(a-dagger,d-dagger,C))/pi_{a-dagger}
///   - h (1-A)(D - p(0,1,C))/pi_0 + p(a-dagger,d-dagger,C) - h p(0,1,C).
/// Under strong monotonicity p(0,1,C) is a known zero, so the h-term and its
/// augmentation drop, mirroring the principal-score reduction.
pub fn eif_psi2(
    g: Stratum,
    a_obs: u8,
    d_obs: u8,
    nuisance: &FittedNuisance,
    p_feats: &[f64],
    pi: f64,
    mode: MonotonicityMode,
) -> f64 {
    let scheme = StratumScheme::for_stratum(g);
    let strong = mode == MonotonicityMode::Strong;
    let lead = match (strong, scheme.a_dagger, scheme.d_dagger) {
        (true, 0, 1) => 0.0,
        (true, 0, 0) => 1.0,
        _ => nuisance.predict_p(scheme.a_dagger, scheme.d_dagger, p_feats),
    };
    let pi_dag = if scheme.a_dagger == 1 { pi } else { 1.0 - pi };
    let mut psi2 = lead;
    if a_obs == scheme.a_dagger && !(strong && scheme.a_dagger == 0) {
        let ind = f64::from(d_obs == scheme.d_dagger);
        psi2 += (ind - lead) / pi_dag;
    }
    if scheme.h == 1 && !strong {
        let p01 = nuisance.predict_p(0, 1, p_feats);
        psi2 -= p01;
        if a_obs == 0 {
            psi2 -= (f64::from(d_obs) - p01) / (1.0 - pi);
        }
    }
    psi2
}

/// psi1 component of the EIF for the cell (a, a*):
/// [I(A=a, D=d*)/(pi_a p(a,d*,C))] (Y - mu(a,d*,C)) e_g(C) + psi2 mu(a,d*,C),
/// where e_g(C) is the unfloored principal score.
#[allow(clippy::too_many_arguments)]
pub fn eif_psi1(
    g: Stratum,
    cell: (u8, u8),
    a_obs: u8,
    d_obs: u8,
    y: f64,
    nuisance: &FittedNuisance,
    p_feats: &[f64],
    mu_feats: &[f64],
    pi: f64,
    mode: MonotonicityMode,
) -> f64 {
    let scheme = StratumScheme::for_stratum(g);
    let (a, a_star) = cell;
    let d_star = scheme.d_star(a_star);
    let mu = nuisance.predict_mu(a, d_star, mu_feats);
    let psi2 = eif_psi2(g, a_obs, d_obs, nuisance, p_feats, pi, mode);
    let mut psi1 = psi2 * mu;
    if a_obs == a && d_obs == d_star {
        let pi_a = if a == 1 { pi } else { 1.0 - pi };
        let p_ad = nuisance.predict_p(a, d_star, p_feats);
        let e_g = principal_score_raw(g, nuisance, p_feats, mode);
        psi1 += (y - mu) * e_g / (pi_a * p_ad);
    }
    psi1
}

/// Computes the cluster-level EIF sums for one (stratum, cell), with the
/// nuisance fit chosen per cluster by `lookup` (full-data fit or the
/// out-of-fold fit under cross-fitting).
pub fn eif_components<'a>(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    lookup: impl Fn(usize) -> &'a FittedNuisance,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
) -> Result<EifComponents> {
    StratumScheme::for_stratum(g).check_cell(cell.0, cell.1)?;
    let pi = dataset.pi();
    let k = dataset.n_clusters();
    let mut psi1_cluster = Vec::with_capacity(k);
    let mut psi2_cluster = Vec::with_capacity(k);
    for (i, cluster) in dataset.clusters().iter().enumerate() {
        let fit = lookup(i);
        let n = cluster.size();
        let w = eval_weight(weight_spec, n, &cluster.cluster_covariates)? / n as f64;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..n {
            let a_obs = cluster.assignment;
            let d_obs = cluster.uptake[j];
            s2 += eif_psi2(g, a_obs, d_obs, fit, &features.p[i][j], pi, mode);
            s1 += eif_psi1(
                g,
                cell,
                a_obs,
                d_obs,
                cluster.outcome[j],
                fit,
                &features.p[i][j],
                &features.mu[i][j],
                pi,
                mode,
            );
        }
        psi1_cluster.push(w * s1);
        psi2_cluster.push(w * s2);
    }
    let denominator_hat = psi2_cluster.iter().sum::<f64>() / k as f64;
    Ok(EifComponents {
        psi1_cluster,
        psi2_cluster,
        denominator_hat,
    })
}

/// Moment (plug-in) estimator: ratio of weighted sums of e_hat * mu_hat to
/// weighted sums of e_hat, all from a full-data nuisance fit. Scores are
/// floored at zero before averaging.
pub fn theta_mo(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    nuisance: &FittedNuisance,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
) -> Result<f64> {
    let scheme = StratumScheme::for_stratum(g);
    scheme.check_cell(cell.0, cell.1)?;
    let (a, a_star) = cell;
    let d_star = scheme.d_star(a_star);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (i, cluster) in dataset.clusters().iter().enumerate() {
        let n = cluster.size();
        let w = eval_weight(weight_spec, n, &cluster.cluster_covariates)? / n as f64;
        for j in 0..n {
            let (e, _) = crate::score::principal_score(g, nuisance, &features.p[i][j], mode);
            let mu = nuisance.predict_mu(a, d_star, &features.mu[i][j]);
            numerator += w * e * mu;
            denominator += w * e;
        }
    }
    if denominator <= DENOMINATOR_GUARD {
        return Err(Error::ZeroDenominator(denominator));
    }
    Ok(numerator / denominator)
}

/// Doubly robust estimator: EIF ratio with a single full-data nuisance fit.
pub fn theta_dr(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    nuisance: &FittedNuisance,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
) -> Result<f64> {
    eif_components(g, cell, dataset, features, |_| nuisance, weight_spec, mode)?.theta()
}

/// Closed-form variance of the cross-fitted estimator:
/// (1/K^2) sum_i [c1_i - c2_i theta]^2 / [(1/K) sum_i c2_i]^2 with c1/c2 the
/// cluster-level psi sums.
pub fn var_np(components: &EifComponents, theta_hat: f64) -> Result<f64> {
    if components.denominator_hat.abs() <= DENOMINATOR_GUARD {
        return Err(Error::ZeroDenominator(components.denominator_hat));
    }
    let k = components.psi1_cluster.len() as f64;
    let ss: f64 = components
        .psi1_cluster
        .iter()
        .zip(&components.psi2_cluster)
        .map(|(c1, c2)| {
            let d = c1 - c2 * theta_hat;
            d * d
        })
        .sum();
    Ok(ss / (k * k) / (components.denominator_hat * components.denominator_hat))
}

/// Cross-fitted EIF components for one cell, using out-of-fold nuisances.
pub fn np_components(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    fits: &CrossFitted,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
) -> Result<EifComponents> {
    eif_components(
        g,
        cell,
        dataset,
        features,
        |i| fits.for_cluster(i),
        weight_spec,
        mode,
    )
}

/// Cross-fitted nonparametric-efficient estimator: point estimate and the
/// influence-function standard error.
#[allow(clippy::too_many_arguments)]
pub fn theta_np(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    spec: &NuisanceSpec,
    l: usize,
    seed: u64,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
) -> Result<(f64, f64)> {
    let folds = make_folds(dataset, l, seed)?;
    let fits = cross_fit(dataset, features, spec, &folds, seed)?;
    let comps = np_components(g, cell, dataset, features, &fits, weight_spec, mode)?;
    let theta = comps.theta()?;
    let se = var_np(&comps, theta)?.sqrt();
    Ok((theta, se))
}

/// Assembles cell means into effect contrasts. ICE for the at and nt strata
/// is a literal zero by construction (their uptake cannot differ across
/// assignment), so PCE equals NAE there.
pub fn assemble_effects(
    g: Stratum,
    thetas: &BTreeMap<(u8, u8), f64>,
    mode: MonotonicityMode,
) -> Result<BTreeMap<Effect, f64>> {
    check_available(g, mode)?;
    let get = |cell: (u8, u8)| -> Result<f64> {
        thetas.get(&cell).copied().ok_or(Error::InvalidCell {
            stratum: g.label().into(),
            a: cell.0,
            a_star: cell.1,
        })
    };
    let mut out = BTreeMap::new();
    match g {
        Stratum::Co => {
            let t11 = get((1, 1))?;
            let t10 = get((1, 0))?;
            let t00 = get((0, 0))?;
            out.insert(Effect::Ice, t11 - t10);
            out.insert(Effect::Nae, t10 - t00);
            out.insert(Effect::Pce, (t11 - t10) + (t10 - t00));
        }
        Stratum::At | Stratum::Nt => {
            let t10 = get((1, 0))?;
            let t00 = get((0, 0))?;
            out.insert(Effect::Ice, 0.0);
            out.insert(Effect::Nae, t10 - t00);
            out.insert(Effect::Pce, t10 - t00);
        }
        Stratum::De => unreachable!("availability checked above"),
    }
    Ok(out)
}

/// Intention-to-treat estimate: difference of weighted cluster-mean outcomes
/// between arms, each arm normalized by its own total weight.
pub fn itt_estimate(dataset: &TrialDataset, weight_spec: &WeightSpec) -> Result<f64> {
    let mut sums = [0.0f64; 2];
    let mut wts = [0.0f64; 2];
    for cluster in dataset.clusters() {
        let n = cluster.size();
        let w = eval_weight(weight_spec, n, &cluster.cluster_covariates)?;
        let ybar = cluster.outcome.iter().sum::<f64>() / n as f64;
        let a = cluster.assignment as usize;
        sums[a] += w * ybar;
        wts[a] += w;
    }
    for arm in [0u8, 1] {
        if wts[arm as usize] <= 0.0 {
            return Err(Error::ArmMissing { arm });
        }
    }
    Ok(sums[1] / wts[1] - sums[0] / wts[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, FeatureSummary};
    use crate::nuisance::{fit_full, Factor, Formula, Term};

    fn minimal_spec() -> NuisanceSpec {
        // intercept + treat designs: exact cell means on factorial fixtures
        let mut spec = NuisanceSpec::glm();
        spec.p_formula = Some(Formula {
            terms: vec![Term(vec![Factor::Treat])],
        });
        spec.mu_formula = Some(Formula {
            terms: vec![Term(vec![Factor::Treat])],
        });
        spec
    }

    // arm-1 clusters: 70% uptake; arm-0: 20%; outcomes depend on (A, D)
    fn fixture(outcome: impl Fn(u8, u8) -> f64) -> (TrialDataset, FeatureTable, FittedNuisance) {
        let mut clusters = Vec::new();
        for i in 0..10 {
            for (arm, cut) in [(1u8, 7usize), (0u8, 2usize)] {
                let d: Vec<u8> = (0..10).map(|j| u8::from(j < cut)).collect();
                let y: Vec<f64> = d.iter().map(|&dj| outcome(arm, dj)).collect();
                clusters.push(
                    Cluster::new(
                        format!("{arm}-{i}"),
                        vec![0.0],
                        vec![vec![0.0]; 10],
                        arm,
                        d,
                        y,
                    )
                    .unwrap(),
                );
            }
        }
        let ds = TrialDataset::new(clusters, 0.5).unwrap();
        let table = FeatureTable::build(&ds, FeatureSummary::Own).unwrap();
        let fit = fit_full(&ds, &table, &minimal_spec(), 0).unwrap();
        (ds, table, fit)
    }

    #[test]
    fn theta_mo_constant_mu_returns_constant() {
        let (ds, table, fit) = fixture(|_, _| 4.25);
        for g in [Stratum::Co, Stratum::Nt, Stratum::At] {
            for &cell in StratumScheme::for_stratum(g).valid_cells() {
                let t = theta_mo(
                    g,
                    cell,
                    &ds,
                    &table,
                    &fit,
                    &WeightSpec::ClusterAverage,
                    MonotonicityMode::Standard,
                )
                .unwrap();
                assert!((t - 4.25).abs() < 1e-9, "{g} {cell:?}: {t}");
            }
        }
    }

    #[test]
    fn theta_mo_zero_mass_errors() {
        // strong mode forces the at score to zero identically
        let (ds, table, fit) = fixture(|a, d| a as f64 + d as f64);
        let err = theta_mo(
            Stratum::At,
            (1, 0),
            &ds,
            &table,
            &fit,
            &WeightSpec::ClusterAverage,
            MonotonicityMode::Strong,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ZeroDenominator(_)));
    }

    #[test]
    fn psi2_arithmetic() {
        let (_, table, fit) = fixture(|a, d| a as f64 + d as f64);
        let feats = &table.p[0][0];
        // p(1,0) fits 0.3 exactly under the intercept+treat design
        let p10 = fit.predict_p(1, 0, feats);
        assert!((p10 - 0.3).abs() < 1e-6, "p10 = {p10}");
        let mode = MonotonicityMode::Standard;
        let v = eif_psi2(Stratum::Nt, 1, 0, &fit, feats, 0.5, mode);
        assert!((v - 1.7).abs() < 1e-6, "psi2 = {v}");
        let v = eif_psi2(Stratum::Nt, 0, 0, &fit, feats, 0.5, mode);
        assert!((v - 0.3).abs() < 1e-6, "psi2 = {v}");
    }

    #[test]
    fn psi1_indicator_off_is_psi2_mu() {
        let (_, table, fit) = fixture(|a, d| 2.0 * a as f64 - d as f64);
        let p_feats = &table.p[0][0];
        let mu_feats = &table.mu[0][0];
        let mode = MonotonicityMode::Standard;
        // cell (1,0) for co has d* = 0; an A=0 observation leaves only the
        // regression term
        let psi2 = eif_psi2(Stratum::Co, 0, 1, &fit, p_feats, 0.5, mode);
        let mu = fit.predict_mu(1, 0, mu_feats);
        let psi1 = eif_psi1(
            Stratum::Co,
            (1, 0),
            0,
            1,
            99.0,
            &fit,
            p_feats,
            mu_feats,
            0.5,
            mode,
        );
        assert!((psi1 - psi2 * mu).abs() < 1e-12);
    }

    #[test]
    fn psi1_zero_residual_is_psi2_mu() {
        let (ds, table, fit) = fixture(|a, d| 1.0 + 2.0 * a as f64 + 3.0 * d as f64);
        let mode = MonotonicityMode::Standard;
        // outcomes are an exact function of (A, D), so residuals vanish and
        // psi1 = psi2 * mu everywhere
        let c = &ds.clusters()[0];
        for j in 0..c.size() {
            let psi2 = eif_psi2(Stratum::Co, c.assignment, c.uptake[j], &fit, &table.p[0][j], 0.5, mode);
            let mu = fit.predict_mu(1, 1, &table.mu[0][j]);
            let psi1 = eif_psi1(
                Stratum::Co,
                (1, 1),
                c.assignment,
                c.uptake[j],
                c.outcome[j],
                &fit,
                &table.p[0][j],
                &table.mu[0][j],
                0.5,
                mode,
            );
            assert!((psi1 - psi2 * mu).abs() < 1e-6);
        }
    }

    #[test]
    fn theta_dr_constant_outcome_is_exact() {
        let (ds, table, fit) = fixture(|_, _| -1.5);
        let t = theta_dr(
            Stratum::Co,
            (1, 1),
            &ds,
            &table,
            &fit,
            &WeightSpec::ClusterAverage,
            MonotonicityMode::Standard,
        )
        .unwrap();
        assert!((t + 1.5).abs() < 1e-9, "theta = {t}");
    }

    #[test]
    fn ratio_root_identity() {
        let (ds, table, fit) = fixture(|a, d| 0.5 + a as f64 - 2.0 * d as f64);
        for g in [Stratum::Co, Stratum::Nt] {
            for &cell in StratumScheme::for_stratum(g).valid_cells() {
                let comps = eif_components(
                    g,
                    cell,
                    &ds,
                    &table,
                    |_| &fit,
                    &WeightSpec::ClusterAverage,
                    MonotonicityMode::Standard,
                )
                .unwrap();
                let theta = comps.theta().unwrap();
                let k = comps.psi1_cluster.len() as f64;
                let root: f64 = comps
                    .psi1_cluster
                    .iter()
                    .zip(&comps.psi2_cluster)
                    .map(|(c1, c2)| c1 - c2 * theta)
                    .sum::<f64>()
                    / k;
                assert!(root.abs() < 1e-10, "{g} {cell:?}: {root}");
            }
        }
    }

    #[test]
    fn invalid_cell_rejected() {
        let (ds, table, fit) = fixture(|a, d| a as f64 + d as f64);
        for g in [Stratum::At, Stratum::Nt] {
            let err = theta_mo(
                g,
                (1, 1),
                &ds,
                &table,
                &fit,
                &WeightSpec::ClusterAverage,
                MonotonicityMode::Standard,
            )
            .unwrap_err();
            assert!(matches!(err, Error::InvalidCell { .. }));
        }
    }

    #[test]
    fn np_with_duplicated_folds_equals_dr() {
        // two identical blocks of clusters: each fold's training complement
        // is a copy of the full data, so out-of-fold predictions coincide
        // with the full-data fit and theta_np == theta_dr exactly
        let (ds, table, fit) = fixture(|a, d| 1.0 + a as f64 + 0.5 * d as f64);
        let folds = crate::nuisance::FoldAssignment {
            n_folds: 2,
            cluster_to_fold: (0..ds.n_clusters()).map(|i| (i / 2) % 2).collect(),
        };
        let fits = cross_fit(&ds, &table, &minimal_spec(), &folds, 3).unwrap();
        let comps = np_components(
            Stratum::Co,
            (1, 1),
            &ds,
            &table,
            &fits,
            &WeightSpec::ClusterAverage,
            MonotonicityMode::Standard,
        )
        .unwrap();
        let t_np = comps.theta().unwrap();
        let t_dr = theta_dr(
            Stratum::Co,
            (1, 1),
            &ds,
            &table,
            &fit,
            &WeightSpec::ClusterAverage,
            MonotonicityMode::Standard,
        )
        .unwrap();
        assert!((t_np - t_dr).abs() < 1e-8, "{t_np} vs {t_dr}");
    }

    #[test]
    fn var_np_degenerate_and_scale_invariant() {
        let (ds, table, fit) = fixture(|a, d| a as f64 - d as f64);
        let comps = eif_components(
            Stratum::Co,
            (1, 0),
            &ds,
            &table,
            |_| &fit,
            &WeightSpec::ClusterAverage,
            MonotonicityMode::Standard,
        )
        .unwrap();
        let theta = comps.theta().unwrap();
        let v = var_np(&comps, theta).unwrap();
        assert!(v >= 0.0);
        // doubling every cluster weight leaves the ratio variance unchanged
        let doubled = EifComponents {
            psi1_cluster: comps.psi1_cluster.iter().map(|c| 2.0 * c).collect(),
            psi2_cluster: comps.psi2_cluster.iter().map(|c| 2.0 * c).collect(),
            denominator_hat: 2.0 * comps.denominator_hat,
        };
        let v2 = var_np(&doubled, theta).unwrap();
        assert!((v - v2).abs() < 1e-14 * v.max(1.0));
        // identical contributions centered at theta give zero variance
        let flat = EifComponents {
            psi1_cluster: vec![3.0 * theta; 4],
            psi2_cluster: vec![3.0; 4],
            denominator_hat: 3.0,
        };
        assert_eq!(var_np(&flat, theta).unwrap(), 0.0);
    }

    #[test]
    fn assemble_effects_identities() {
        let mut thetas = BTreeMap::new();
        thetas.insert((1, 1), 2.5);
        thetas.insert((1, 0), 1.75);
        thetas.insert((0, 0), -0.5);
        let eff = assemble_effects(Stratum::Co, &thetas, MonotonicityMode::Standard).unwrap();
        assert!((eff[&Effect::Ice] - 0.75).abs() < 1e-15);
        assert!((eff[&Effect::Nae] - 2.25).abs() < 1e-15);
        // telescoping holds exactly for any inputs
        assert_eq!(eff[&Effect::Pce], eff[&Effect::Ice] + eff[&Effect::Nae]);

        let eff = assemble_effects(Stratum::Nt, &thetas, MonotonicityMode::Standard).unwrap();
        assert_eq!(eff[&Effect::Ice], 0.0);
        assert_eq!(eff[&Effect::Pce], eff[&Effect::Nae]);

        assert!(matches!(
            assemble_effects(Stratum::At, &thetas, MonotonicityMode::Strong),
            Err(Error::StratumUnavailable(_))
        ));
        assert!(matches!(
            assemble_effects(Stratum::De, &thetas, MonotonicityMode::Standard),
            Err(Error::StratumUnavailable(_))
        ));
    }

    #[test]
    fn itt_basics() {
        let mk = |id: &str, a: u8, ys: &[f64]| {
            Cluster::new(
                id,
                vec![0.0],
                vec![vec![0.0]; ys.len()],
                a,
                vec![0; ys.len()],
                ys.to_vec(),
            )
            .unwrap()
        };
        let ds = TrialDataset::new(
            vec![mk("t", 1, &[4.0, 6.0]), mk("c", 0, &[2.0, 2.0])],
            0.5,
        )
        .unwrap();
        let itt = itt_estimate(&ds, &WeightSpec::ClusterAverage).unwrap();
        assert!((itt - 3.0).abs() < 1e-12);

        let ds = TrialDataset::new(
            vec![mk("t", 1, &[1.0, 1.0]), mk("c", 0, &[1.0, 1.0])],
            0.5,
        )
        .unwrap();
        assert_eq!(itt_estimate(&ds, &WeightSpec::ClusterAverage).unwrap(), 0.0);
    }
}

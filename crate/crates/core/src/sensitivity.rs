//! Sensitivity analysis for departures from principal ignorability.
//!
//! Three positive sensitivity functions (alpha, beta, gamma) encode ratios
//! of conditional outcome means across strata. They induce weight functions
//! omega(g, a, a*, C) that rescale the identification formulas; at
//! alpha = beta = gamma = 1 everything reduces exactly to the base analysis.
//! Grid scans evaluate bias-corrected effects over constant sensitivity
//! values, varying only the axes each estimand actually depends on.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cluster, TrialDataset, WeightSpec};
use crate::error::{Error, Result};
use crate::estimators::{eif_psi2, var_np, Effect, EifComponents, DENOMINATOR_GUARD};
use crate::expr::{Expr, Vars};
use crate::inference::{conservative_contrast_variance, wald_ci};
use crate::nuisance::{CrossFitted, FeatureTable, FittedNuisance};
use crate::score::{
    check_available, principal_score, principal_score_raw, MonotonicityMode, Stratum, StratumScheme,
};

/// One sensitivity function: a positive constant or an expression over the
/// raw covariates (n, v..., x...).
#[derive(Debug, Clone)]
pub enum SensitivityFn {
    Constant(f64),
    Expr(Expr),
}

impl SensitivityFn {
    pub fn eval(&self, cluster: &Cluster, j: usize) -> Result<f64> {
        match self {
            SensitivityFn::Constant(c) => Ok(*c),
            SensitivityFn::Expr(e) => e.eval(&Vars {
                n: cluster.size() as f64,
                v: &cluster.cluster_covariates,
                x: &cluster.indiv_covariates[j],
            }),
        }
    }

    pub fn is_one(&self) -> bool {
        matches!(self, SensitivityFn::Constant(c) if *c == 1.0)
    }
}

/// The (alpha, beta, gamma) triple. Under strong monotonicity beta is
/// irrelevant (always-takers are absent) and the weights ignore it.
#[derive(Debug, Clone)]
pub struct SensitivityFunctions {
    pub alpha: SensitivityFn,
    pub beta: SensitivityFn,
    pub gamma: SensitivityFn,
}

impl SensitivityFunctions {
    pub fn constant(alpha: f64, beta: f64, gamma: f64) -> Self {
        SensitivityFunctions {
            alpha: SensitivityFn::Constant(alpha),
            beta: SensitivityFn::Constant(beta),
            gamma: SensitivityFn::Constant(gamma),
        }
    }

    /// The identity point: every weight equals one.
    pub fn identity() -> Self {
        Self::constant(1.0, 1.0, 1.0)
    }
}

/// Axis of the sensitivity grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParam {
    Alpha,
    Beta,
    Gamma,
}

/// The weight function omega(g, a, a*, C) from the bias-corrected
/// identification result, evaluated at one individual's uptake
/// probabilities and sensitivity values.
#[allow(clippy::too_many_arguments)]
pub fn omega_weight(
    g: Stratum,
    cell: (u8, u8),
    p11: f64,
    p01: f64,
    p00: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    context: (&str, usize),
) -> Result<f64> {
    let guard = |value: f64| -> Result<f64> {
        if value <= 0.0 {
            Err(Error::NonPositiveDenominator {
                value,
                cluster: context.0.to_string(),
                individual: context.1,
            })
        } else {
            Ok(value)
        }
    };
    // the at weight for its d* = 1 cells; co's (1,1) weight reuses it
    let omega_at_10 = |beta: f64| -> Result<f64> {
        let denom = guard(beta * p11 + (1.0 - beta) * p01)?;
        Ok(p11 / denom)
    };
    let omega_nt_00 = |alpha: f64| -> Result<f64> {
        let denom = guard(1.0 - alpha * p01 + (alpha - 1.0) * p11)?;
        Ok(p00 / denom)
    };
    match (g, cell) {
        (Stratum::At, (1, 0)) => omega_at_10(beta),
        (Stratum::At, (0, 0)) => Ok(1.0),
        (Stratum::Nt, (0, 0)) => omega_nt_00(alpha),
        (Stratum::Nt, (1, 0)) => Ok(1.0),
        (Stratum::Co, (1, 1)) => Ok(beta * omega_at_10(beta)?),
        (Stratum::Co, (0, 0)) => Ok(alpha * omega_nt_00(alpha)?),
        (Stratum::Co, (1, 0)) => Ok(gamma),
        _ => Err(Error::InvalidCell {
            stratum: g.label().into(),
            a: cell.0,
            a_star: cell.1,
        }),
    }
}

fn omega_for(
    g: Stratum,
    cell: (u8, u8),
    cluster: &Cluster,
    j: usize,
    nuisance: &FittedNuisance,
    p_feats: &[f64],
    s: &SensitivityFunctions,
    mode: MonotonicityMode,
) -> Result<f64> {
    let p11 = nuisance.predict_p(1, 1, p_feats);
    let (p01, p00) = match mode {
        MonotonicityMode::Strong => (0.0, 1.0),
        MonotonicityMode::Standard => {
            let p01 = nuisance.predict_p(0, 1, p_feats);
            (p01, 1.0 - p01)
        }
    };
    omega_weight(
        g,
        cell,
        p11,
        p01,
        p00,
        s.alpha.eval(cluster, j)?,
        s.beta.eval(cluster, j)?,
        s.gamma.eval(cluster, j)?,
        (&cluster.id, j),
    )
}

/// Bias-corrected moment estimator: the omega-weighted plug-in ratio
/// sum w * omega * e_hat * mu_hat over sum w * e_hat.
#[allow(clippy::too_many_arguments)]
pub fn theta_bc_mo(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    nuisance: &FittedNuisance,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
    s: &SensitivityFunctions,
) -> Result<f64> {
    let scheme = StratumScheme::for_stratum(g);
    scheme.check_cell(cell.0, cell.1)?;
    let d_star = scheme.d_star(cell.1);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (i, cluster) in dataset.clusters().iter().enumerate() {
        let n = cluster.size();
        let w = crate::data::eval_weight(weight_spec, n, &cluster.cluster_covariates)? / n as f64;
        for j in 0..n {
            let (e, _) = principal_score(g, nuisance, &features.p[i][j], mode);
            let omega = omega_for(g, cell, cluster, j, nuisance, &features.p[i][j], s, mode)?;
            let mu = nuisance.predict_mu(cell.0, d_star, &features.mu[i][j]);
            numerator += w * omega * e * mu;
            denominator += w * e;
        }
    }
    if denominator <= DENOMINATOR_GUARD {
        return Err(Error::ZeroDenominator(denominator));
    }
    Ok(numerator / denominator)
}

/// Cluster-level components of the bias-corrected cross-fitted estimator:
/// psi1_bc = omega * [I(A=a, D=d*)/(pi_a p(a,d*))](Y - mu) e_g(C)
///           + psi2 * omega * mu,
/// over the unchanged psi2. At omega identically one this reproduces the
/// base components bit-for-bit.
#[allow(clippy::too_many_arguments)]
pub fn bc_components(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    fits: &CrossFitted,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
    s: &SensitivityFunctions,
) -> Result<EifComponents> {
    let scheme = StratumScheme::for_stratum(g);
    scheme.check_cell(cell.0, cell.1)?;
    let (a, a_star) = cell;
    let d_star = scheme.d_star(a_star);
    let pi = dataset.pi();
    let pi_a = if a == 1 { pi } else { 1.0 - pi };
    let k = dataset.n_clusters();
    let mut psi1_cluster = Vec::with_capacity(k);
    let mut psi2_cluster = Vec::with_capacity(k);
    for (i, cluster) in dataset.clusters().iter().enumerate() {
        let fit = fits.for_cluster(i);
        let n = cluster.size();
        let w = crate::data::eval_weight(weight_spec, n, &cluster.cluster_covariates)? / n as f64;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..n {
            let p_feats = &features.p[i][j];
            let mu_feats = &features.mu[i][j];
            let omega = omega_for(g, cell, cluster, j, fit, p_feats, s, mode)?;
            let mu = fit.predict_mu(a, d_star, mu_feats);
            let psi2 = eif_psi2(g, cluster.assignment, cluster.uptake[j], fit, p_feats, pi, mode);
            // mirrors the base psi1 arithmetic so omega = 1 is bit-identical
            let mut psi1 = psi2 * (omega * mu);
            if cluster.assignment == a && cluster.uptake[j] == d_star {
                let p_ad = fit.predict_p(a, d_star, p_feats);
                let e_g = principal_score_raw(g, fit, p_feats, mode);
                psi1 += (cluster.outcome[j] - mu) * e_g / (pi_a * p_ad) * omega;
            }
            s1 += psi1;
            s2 += psi2;
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

/// Bias-corrected cross-fitted estimate with its influence-function
/// standard error, on pre-computed out-of-fold nuisances.
#[allow(clippy::too_many_arguments)]
pub fn theta_bc_np(
    g: Stratum,
    cell: (u8, u8),
    dataset: &TrialDataset,
    features: &FeatureTable,
    fits: &CrossFitted,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
    s: &SensitivityFunctions,
) -> Result<(f64, f64)> {
    let comps = bc_components(g, cell, dataset, features, fits, weight_spec, mode, s)?;
    let theta = comps.theta()?;
    let se = var_np(&comps, theta)?.sqrt();
    Ok((theta, se))
}

/// The sensitivity functions a bias-corrected estimand actually depends on.
/// Grid scans hold every other axis fixed.
pub fn dependence_filter(
    g: Stratum,
    effect: Effect,
    mode: MonotonicityMode,
) -> Result<Vec<SensitivityParam>> {
    use Effect::*;
    use SensitivityParam::*;
    check_available(g, mode)?;
    let deps: &[SensitivityParam] = match (g, effect, mode) {
        (Stratum::Co, Pce, MonotonicityMode::Standard) => &[Alpha, Beta],
        (Stratum::Co, Ice, MonotonicityMode::Standard) => &[Beta, Gamma],
        (Stratum::Co, Nae, MonotonicityMode::Standard) => &[Alpha, Gamma],
        (Stratum::Co, Pce, MonotonicityMode::Strong) => &[Alpha],
        (Stratum::Co, Ice, MonotonicityMode::Strong) => &[Gamma],
        (Stratum::Co, Nae, MonotonicityMode::Strong) => &[Alpha, Gamma],
        // ICE vanishes by construction for one-sided strata
        (Stratum::Nt, Ice, _) | (Stratum::At, Ice, _) => &[],
        (Stratum::Nt, Pce | Nae, _) => &[Alpha],
        (Stratum::At, Pce | Nae, _) => &[Beta],
        (Stratum::De, _, _) => unreachable!("availability checked above"),
    };
    Ok(deps.to_vec())
}

/// The cells and contrast coefficients composing an effect.
fn effect_cells(g: Stratum, effect: Effect) -> Vec<((u8, u8), f64)> {
    match (g, effect) {
        (Stratum::Co, Effect::Ice) => vec![((1, 1), 1.0), ((1, 0), -1.0)],
        (Stratum::Co, Effect::Nae) => vec![((1, 0), 1.0), ((0, 0), -1.0)],
        (Stratum::Co, Effect::Pce) => vec![((1, 1), 1.0), ((0, 0), -1.0)],
        (_, Effect::Ice) => vec![],
        (_, Effect::Nae | Effect::Pce) => vec![((1, 0), 1.0), ((0, 0), -1.0)],
    }
}

/// One row of the long-format sensitivity grid output.
#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub estimand: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Evaluates bias-corrected effects over the Cartesian grid of constant
/// sensitivity values. Each estimand is computed once per distinct
/// combination of the axes it depends on and replicated across the others,
/// so output is constant along irrelevant axes by construction. Nuisance
/// fits and folds are taken as given and reused for every grid point.
#[allow(clippy::too_many_arguments)]
pub fn grid_scan(
    g: Stratum,
    effects: &[Effect],
    dataset: &TrialDataset,
    features: &FeatureTable,
    fits: &CrossFitted,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
    alphas: &[f64],
    betas: &[f64],
    gammas: &[f64],
    level: f64,
) -> Result<Vec<GridRow>> {
    check_available(g, mode)?;
    let evaluate = |s: &SensitivityFunctions, effect: Effect| -> Result<(f64, f64)> {
        let cells = effect_cells(g, effect);
        if cells.is_empty() {
            return Ok((0.0, 0.0)); // ICE for one-sided strata
        }
        let mut comps = Vec::new();
        let mut thetas = Vec::new();
        let mut lambdas = Vec::new();
        for (cell, lambda) in &cells {
            let c = bc_components(g, *cell, dataset, features, fits, weight_spec, mode, s)?;
            thetas.push(c.theta()?);
            lambdas.push(*lambda);
            comps.push(c);
        }
        let estimate: f64 = thetas.iter().zip(&lambdas).map(|(t, l)| t * l).sum();
        let refs: Vec<&EifComponents> = comps.iter().collect();
        let var = conservative_contrast_variance(&refs, &thetas, &lambdas)?;
        Ok((estimate, var.sqrt()))
    };

    let mut rows = Vec::new();
    for &effect in effects {
        let deps = dependence_filter(g, effect, mode)?;
        let uses = |p: SensitivityParam| deps.contains(&p);
        // distinct relevant coordinates, in grid order
        let mut keys: Vec<(f64, f64, f64)> = Vec::new();
        for &a in alphas {
            for &b in betas {
                for &c in gammas {
                    let key = (
                        if uses(SensitivityParam::Alpha) { a } else { 1.0 },
                        if uses(SensitivityParam::Beta) { b } else { 1.0 },
                        if uses(SensitivityParam::Gamma) { c } else { 1.0 },
                    );
                    if !keys.contains(&key) {
                        keys.push(key);
                    }
                }
            }
        }
        let computed: Vec<Result<(f64, f64)>> = keys
            .par_iter()
            .map(|&(a, b, c)| evaluate(&SensitivityFunctions::constant(a, b, c), effect))
            .collect();
        let mut memo: BTreeMap<(u64, u64, u64), (f64, f64)> = BTreeMap::new();
        for (key, res) in keys.iter().zip(computed) {
            memo.insert((key.0.to_bits(), key.1.to_bits(), key.2.to_bits()), res?);
        }
        for &a in alphas {
            for &b in betas {
                for &c in gammas {
                    let key = (
                        if uses(SensitivityParam::Alpha) { a } else { 1.0 },
                        if uses(SensitivityParam::Beta) { b } else { 1.0 },
                        if uses(SensitivityParam::Gamma) { c } else { 1.0 },
                    );
                    let (estimate, se) =
                        memo[&(key.0.to_bits(), key.1.to_bits(), key.2.to_bits())];
                    let (ci_lo, ci_hi) = wald_ci(estimate, se, level);
                    rows.push(GridRow {
                        alpha: a,
                        beta: b,
                        gamma: c,
                        estimand: effect.estimand(g),
                        estimate,
                        se,
                        ci_lo,
                        ci_hi,
                    });
                }
            }
        }
    }
    Ok(rows)
}

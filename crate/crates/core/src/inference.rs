//! Cluster-level inference: nonparametric cluster bootstrap with percentile
//! intervals for the moment and doubly robust estimators, Wald intervals for
//! the cross-fitted estimator, and delta-method variances for contrasts of
//! cell means sharing a stratum denominator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimators::{EifComponents, DENOMINATOR_GUARD};
use crate::nuisance::derive_seed;

/// Fraction of failed bootstrap replicates tolerated before erroring.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

/// Minimum replicate count for interval reporting.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Bootstrap output: replicate values in replicate-index order (failed
/// replicates removed) and the count of dropped replicates.
#[derive(Debug, Clone)]
pub struct BootstrapDistribution {
    pub values: Vec<f64>,
    pub failures: usize,
}

/// Evaluates the estimator on `cfg.b` with-replacement cluster resamples.
/// Resampled clusters keep their full membership. Replicates run in
/// parallel with per-replicate derived seeds; erroring replicates are
/// dropped and counted, erroring the whole call past the 10% threshold.
pub fn cluster_bootstrap<F>(
    estimator: F,
    dataset: &TrialDataset,
    cfg: &BootstrapConfig,
) -> Result<BootstrapDistribution>
where
    F: Fn(&TrialDataset, u64) -> Result<f64> + Sync,
{
    let k = dataset.n_clusters();
    let results: Vec<Option<f64>> = (0..cfg.b)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(cfg.seed, 1 + rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
            let indices: Vec<usize> = (0..k).map(|_| rng.gen_range(0..k)).collect();
            let resample = dataset.resample(&indices).ok()?;
            estimator(&resample, rep_seed).ok()
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if (failures as f64) > MAX_FAILED_FRACTION * cfg.b as f64 {
        return Err(Error::TooManyFailedReplicates {
            failed: failures,
            total: cfg.b,
        });
    }
    Ok(BootstrapDistribution {
        values: results.into_iter().flatten().collect(),
        failures,
    })
}

/// Empirical quantile with linear interpolation between order statistics
/// (inclusive endpoints): position (n-1)q on the sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Percentile interval: the alpha/2 and 1 - alpha/2 empirical quantiles.
pub fn percentile_ci(distribution: &[f64], level: f64) -> Result<(f64, f64)> {
    if distribution.len() < MIN_REPLICATES {
        return Err(Error::InsufficientReplicates {
            needed: MIN_REPLICATES,
            found: distribution.len(),
        });
    }
    let mut sorted = distribution.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 1.0 - level;
    Ok((
        quantile(&sorted, alpha / 2.0),
        quantile(&sorted, 1.0 - alpha / 2.0),
    ))
}

/// Inverse standard normal CDF by rational approximation (absolute error
/// below 1.2e-9 across the open unit interval).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Wald interval: point +/- z_{1-alpha/2} * se.
pub fn wald_ci(point: f64, se: f64, level: f64) -> (f64, f64) {
    debug_assert!(se >= 0.0);
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    (point - z * se, point + z * se)
}

/// Delta-method variance of sum_c lambda_c * theta_c over cells of one
/// stratum. The cells share psi2 (and hence the denominator), so the
/// contrast's cluster-level influence contribution is
/// (sum_c lambda_c psi1_c) - psi2 * (sum_c lambda_c theta_c), normalized
/// like `var_np`. Cells must come from the same stratum and fold
/// assignment, detected via their psi2 contributions.
pub fn contrast_variance(
    cells: &[&EifComponents],
    thetas: &[f64],
    lambdas: &[f64],
) -> Result<f64> {
    assert_eq!(cells.len(), thetas.len());
    assert_eq!(cells.len(), lambdas.len());
    assert!(!cells.is_empty());
    let k = cells[0].psi1_cluster.len();
    for c in cells {
        if c.psi2_cluster.len() != k
            || c.psi2_cluster
                .iter()
                .zip(&cells[0].psi2_cluster)
                .any(|(a, b)| (a - b).abs() > 1e-10)
        {
            return Err(Error::MixedStrata);
        }
    }
    let denom = cells[0].denominator_hat;
    if denom.abs() <= DENOMINATOR_GUARD {
        return Err(Error::ZeroDenominator(denom));
    }
    let contrast_theta: f64 = thetas.iter().zip(lambdas).map(|(t, l)| t * l).sum();
    let mut ss = 0.0;
    for i in 0..k {
        let psi1: f64 = cells
            .iter()
            .zip(lambdas)
            .map(|(c, l)| l * c.psi1_cluster[i])
            .sum();
        let d = psi1 - cells[0].psi2_cluster[i] * contrast_theta;
        ss += d * d;
    }
    Ok(ss / (k as f64 * k as f64) / (denom * denom))
}

/// Conservative variance for sum_c lambda_c * theta_c: the sum of per-cell
/// influence-function variances, sum_c lambda_c^2 * var_np(cell_c). This
/// drops the (typically positive) cross-cell covariance, so the resulting
/// Wald intervals over-cover rather than under-cover. Used for reported
/// effect-contrast standard errors; `contrast_variance` gives the tighter
/// shared-denominator delta-method form.
pub fn conservative_contrast_variance(
    cells: &[&EifComponents],
    thetas: &[f64],
    lambdas: &[f64],
) -> Result<f64> {
    assert_eq!(cells.len(), thetas.len());
    assert_eq!(cells.len(), lambdas.len());
    assert!(!cells.is_empty());
    let mut var = 0.0;
    for ((c, &t), &l) in cells.iter().zip(thetas).zip(lambdas) {
        var += l * l * crate::estimators::var_np(c, t)?;
    }
    Ok(var)
}

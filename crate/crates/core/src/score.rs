//! Principal scores and stratum bookkeeping.
//!
//! Each stratum carries a constant tuple (d*, a-dagger, d-dagger, h) that
//! drives both the principal-score identification formula
//! e_g(C) = p(a-dagger, d-dagger, C) - h * p(0,1,C) and the influence
//! function components. The tuple map used here is
//! at -> (0,1,0), co -> (1,1,1), nt -> (1,0,0), de -> (0,1,1), which is the
//! unique permutation under which the scores sum to one, the defier score
//! vanishes identically, and one-sided noncompliance forces the
//! always-taker score to zero.

use serde::{Deserialize, Serialize};

use crate::data::{eval_weight, TrialDataset, WeightSpec};
use crate::error::{Error, Result};
use crate::nuisance::{FeatureTable, FittedNuisance};

/// Principal stratum defined by the joint potential uptake (D(1), D(0)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    /// Always-takers: D(1) = D(0) = 1.
    At,
    /// Compliers: D(1) = 1, D(0) = 0.
    Co,
    /// Never-takers: D(1) = D(0) = 0.
    Nt,
    /// Defiers: D(1) = 0, D(0) = 1 (absent under monotonicity).
    De,
}

impl Stratum {
    pub fn label(self) -> &'static str {
        match self {
            Stratum::At => "at",
            Stratum::Co => "co",
            Stratum::Nt => "nt",
            Stratum::De => "de",
        }
    }
}

impl std::fmt::Display for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MonotonicityMode {
    /// No defiers.
    #[default]
    Standard,
    /// One-sided noncompliance: D(0) = 0, so always-takers are absent and
    /// p(0,1,C) is treated as identically zero.
    Strong,
}

/// Per-stratum constants driving identification and the EIF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StratumScheme {
    pub stratum: Stratum,
    pub a_dagger: u8,
    pub d_dagger: u8,
    pub h: u8,
}

impl StratumScheme {
    pub fn for_stratum(g: Stratum) -> StratumScheme {
        let (a_dagger, d_dagger, h) = match g {
            Stratum::At => (0, 1, 0),
            Stratum::Co => (1, 1, 1),
            Stratum::Nt => (1, 0, 0),
            Stratum::De => (0, 1, 1),
        };
        StratumScheme {
            stratum: g,
            a_dagger,
            d_dagger,
            h,
        }
    }

    /// d* for cell (a, a*): 1 for at, a* for co, 0 for nt.
    pub fn d_star(&self, a_star: u8) -> u8 {
        match self.stratum {
            Stratum::At => 1,
            Stratum::Co => a_star,
            Stratum::Nt => 0,
            Stratum::De => unreachable!("defier cells are never estimated"),
        }
    }

    /// The (a, a*) cells for which theta_g(a, a*) is defined.
    pub fn valid_cells(&self) -> &'static [(u8, u8)] {
        match self.stratum {
            Stratum::Co => &[(1, 1), (1, 0), (0, 0)],
            Stratum::At | Stratum::Nt => &[(1, 0), (0, 0)],
            Stratum::De => &[],
        }
    }

    pub fn check_cell(&self, a: u8, a_star: u8) -> Result<()> {
        if self.valid_cells().contains(&(a, a_star)) {
            Ok(())
        } else {
            Err(Error::InvalidCell {
                stratum: self.stratum.label().into(),
                a,
                a_star,
            })
        }
    }
}

/// Checks stratum availability under the monotonicity mode.
pub fn check_available(g: Stratum, mode: MonotonicityMode) -> Result<()> {
    match (g, mode) {
        (Stratum::De, _) => Err(Error::StratumUnavailable("de".into())),
        (Stratum::At, MonotonicityMode::Strong) => Err(Error::StratumUnavailable("at".into())),
        _ => Ok(()),
    }
}

/// Raw (unfloored) principal score e_g(C) = p(a-dagger, d-dagger, C)
/// - h * p(0,1,C). Under strong monotonicity p(0,1,C) is taken as 0.
pub fn principal_score_raw(
    g: Stratum,
    nuisance: &FittedNuisance,
    feats: &[f64],
    mode: MonotonicityMode,
) -> f64 {
    let scheme = StratumScheme::for_stratum(g);
    let p01 = match mode {
        MonotonicityMode::Strong => 0.0,
        MonotonicityMode::Standard => nuisance.predict_p(0, 1, feats),
    };
    let lead = match mode {
        MonotonicityMode::Strong if (scheme.a_dagger, scheme.d_dagger) == (0, 1) => 0.0,
        MonotonicityMode::Strong if (scheme.a_dagger, scheme.d_dagger) == (0, 0) => 1.0,
        _ => nuisance.predict_p(scheme.a_dagger, scheme.d_dagger, feats),
    };
    lead - scheme.h as f64 * p01
}

/// Principal score floored at zero; returns (score, floored?).
pub fn principal_score(
    g: Stratum,
    nuisance: &FittedNuisance,
    feats: &[f64],
    mode: MonotonicityMode,
) -> (f64, bool) {
    let raw = principal_score_raw(g, nuisance, feats, mode);
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw, false)
    }
}

/// Plug-in estimate of the stratum proportion e_g, with the flooring count
/// among scores used.
pub fn stratum_proportion(
    g: Stratum,
    dataset: &TrialDataset,
    features: &FeatureTable,
    nuisance: &FittedNuisance,
    weight_spec: &WeightSpec,
    mode: MonotonicityMode,
) -> Result<(f64, usize)> {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut floored = 0usize;
    let k = dataset.n_clusters() as f64;
    for (i, cluster) in dataset.clusters().iter().enumerate() {
        let n = cluster.size();
        let w = eval_weight(weight_spec, n, &cluster.cluster_covariates)?;
        let mut score_sum = 0.0;
        for j in 0..n {
            let (e, was_floored) = principal_score(g, nuisance, &features.p[i][j], mode);
            if was_floored {
                floored += 1;
            }
            score_sum += e;
        }
        numerator += w / n as f64 * score_sum;
        denominator += w;
    }
    Ok((numerator / k / (denominator / k), floored))
}

//! Nuisance surfaces p(a,d,C) and mu(a,d,C): model specification, fitting
//! (parametric GLM or a stacked glm+forest ensemble), and cluster-level
//! cross-fitting.
//!
//! The uptake surface is a single model of D on (A, features); the outcome
//! surface is fit separately within each assignment arm with D as a
//! regressor. Predicted probabilities are clipped to [eps, 1-eps] and the
//! pair p(a,1), p(a,0) always sums to one exactly.

pub mod forest;
pub mod glm;
pub mod stack;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{build_features, FeatureSummary, TrialDataset};
use crate::error::{Error, Result};
use forest::ForestConfig;
use glm::{fit_linear, fit_logistic, predict_linear, LogisticFit};
use stack::{fit_stack, BaseLearner, Loss, StackFit};

/// Default probability clip applied to fitted uptake surfaces.
pub const DEFAULT_CLIP_EPS: f64 = 1e-3;

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// One multiplicand of a design-matrix term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// The conditioning variable: A for the uptake model, D for the outcome
    /// model.
    Treat,
    /// Index into the summarized feature vector (S_ij, V, N).
    Feat(usize),
}

/// A product of factors; the intercept is implicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term(pub Vec<Factor>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Formula {
    pub terms: Vec<Term>,
}

impl Formula {
    /// Main effects of all features plus Treat and Treat x N (N being the
    /// last feature slot).
    pub fn default_p(n_feats: usize) -> Formula {
        let mut terms = vec![
            Term(vec![Factor::Treat]),
            Term(vec![Factor::Treat, Factor::Feat(n_feats - 1)]),
        ];
        terms.extend((0..n_feats).map(|k| Term(vec![Factor::Feat(k)])));
        Formula { terms }
    }

    /// Main effects plus Treat, Treat x N, and Treat x first own covariate.
    pub fn default_mu(n_feats: usize) -> Formula {
        let mut terms = vec![
            Term(vec![Factor::Treat]),
            Term(vec![Factor::Treat, Factor::Feat(n_feats - 1)]),
            Term(vec![Factor::Treat, Factor::Feat(0)]),
        ];
        terms.extend((0..n_feats).map(|k| Term(vec![Factor::Feat(k)])));
        Formula { terms }
    }

    /// Builds a design row (with leading intercept) for one individual.
    pub fn design_row(&self, treat: f64, feats: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.terms.len() + 1);
        row.push(1.0);
        for term in &self.terms {
            let mut value = 1.0;
            for factor in &term.0 {
                value *= match factor {
                    Factor::Treat => treat,
                    Factor::Feat(k) => feats[*k],
                };
            }
            row.push(value);
        }
        row
    }
}

/// Per-individual feature vectors for the two nuisance models, indexed
/// parallel to the dataset's clusters. The p and mu blocks may differ when a
/// simulation scenario deliberately misspecifies one surface.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub p: Vec<Vec<Vec<f64>>>,
    pub mu: Vec<Vec<Vec<f64>>>,
}

impl FeatureTable {
    pub fn build(dataset: &TrialDataset, summary: FeatureSummary) -> Result<FeatureTable> {
        let feats = dataset
            .clusters()
            .iter()
            .map(|c| {
                (0..c.size())
                    .map(|j| build_features(c, summary, j))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable {
            p: feats.clone(),
            mu: feats,
        })
    }

    pub fn n_feats(&self) -> usize {
        self.p[0][0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Glm,
    Ensemble,
}

/// Specification of the nuisance learners.
#[derive(Debug, Clone, Serialize)]
pub struct NuisanceSpec {
    pub learner: LearnerKind,
    /// None selects the default formula for the feature dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_formula: Option<Formula>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_formula: Option<Formula>,
    pub ensemble_members: Vec<BaseLearner>,
    pub stack_folds: usize,
    pub clip_eps: f64,
}

impl NuisanceSpec {
    pub fn glm() -> Self {
        NuisanceSpec {
            learner: LearnerKind::Glm,
            p_formula: None,
            mu_formula: None,
            ensemble_members: vec![],
            stack_folds: 5,
            clip_eps: DEFAULT_CLIP_EPS,
        }
    }

    pub fn ensemble() -> Self {
        NuisanceSpec {
            learner: LearnerKind::Ensemble,
            p_formula: None,
            mu_formula: None,
            ensemble_members: vec![BaseLearner::Glm, BaseLearner::Forest(ForestConfig::default())],
            stack_folds: 5,
            clip_eps: DEFAULT_CLIP_EPS,
        }
    }

    fn p_formula(&self, n_feats: usize) -> Formula {
        self.p_formula
            .clone()
            .unwrap_or_else(|| Formula::default_p(n_feats))
    }

    fn mu_formula(&self, n_feats: usize) -> Formula {
        self.mu_formula
            .clone()
            .unwrap_or_else(|| Formula::default_mu(n_feats))
    }
}

#[derive(Debug, Clone)]
enum Model {
    Logistic(LogisticFit),
    Linear(Vec<f64>),
    Stack(StackFit),
}

impl Model {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Model::Logistic(fit) => fit.predict(row),
            Model::Linear(coefs) => predict_linear(coefs, row),
            Model::Stack(fit) => fit.predict(row),
        }
    }
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ModelDiagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stack_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_losses: Option<Vec<f64>>,
    pub separation: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NuisanceDiagnostics {
    pub fold_tag: String,
    pub p: ModelDiagnostics,
    pub mu_arm0: ModelDiagnostics,
    pub mu_arm1: ModelDiagnostics,
}

/// Fitted prediction surfaces for p(a,d,C) and mu(a,d,C).
#[derive(Debug, Clone)]
pub struct FittedNuisance {
    p_model: Model,
    mu_models: [Model; 2],
    p_formula: Formula,
    mu_formula: Formula,
    clip_eps: f64,
    pub fold_tag: String,
    pub diagnostics: NuisanceDiagnostics,
}

impl FittedNuisance {
    /// P(D = d | A = a, C) for the individual with the given p-model
    /// features, clipped to [eps, 1-eps]; p(a,1) + p(a,0) is exactly 1.
    pub fn predict_p(&self, a: u8, d: u8, feats: &[f64]) -> f64 {
        let row = self.p_formula.design_row(a as f64, feats);
        let raw = self.p_model.predict(&row).clamp(0.0, 1.0);
        let p1 = raw.clamp(self.clip_eps, 1.0 - self.clip_eps);
        if d == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    /// E[Y | A = a, D = d, C] for the individual with the given mu-model
    /// features.
    pub fn predict_mu(&self, a: u8, d: u8, feats: &[f64]) -> f64 {
        let row = self.mu_formula.design_row(d as f64, feats);
        self.mu_models[a as usize].predict(&row)
    }
}

fn model_diagnostics(model: &Model) -> ModelDiagnostics {
    match model {
        Model::Logistic(fit) => ModelDiagnostics {
            coefficients: Some(fit.coefs.clone()),
            separation: fit.separation,
            ..ModelDiagnostics::default()
        },
        Model::Linear(coefs) => ModelDiagnostics {
            coefficients: Some(coefs.clone()),
            ..ModelDiagnostics::default()
        },
        Model::Stack(fit) => ModelDiagnostics {
            stack_weights: Some(fit.weights.clone()),
            cv_losses: Some(fit.cv_losses.clone()),
            separation: fit.separation,
            ..ModelDiagnostics::default()
        },
    }
}

/// Fits both nuisance surfaces on the given training clusters.
pub fn fit_on_clusters(
    dataset: &TrialDataset,
    features: &FeatureTable,
    spec: &NuisanceSpec,
    train: &[usize],
    seed: u64,
    fold_tag: &str,
) -> Result<FittedNuisance> {
    let n_feats = features.n_feats();
    let p_formula = spec.p_formula(n_feats);
    let mu_formula = spec.mu_formula(n_feats);

    let mut p_rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut p_groups: Vec<usize> = Vec::new();
    let mut mu_rows: [Vec<(Vec<f64>, f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut mu_groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in train {
        let cluster = &dataset.clusters()[i];
        let a = cluster.assignment;
        for j in 0..cluster.size() {
            p_rows.push((
                p_formula.design_row(a as f64, &features.p[i][j]),
                cluster.uptake[j] as f64,
                1.0,
            ));
            p_groups.push(i);
            mu_rows[a as usize].push((
                mu_formula.design_row(cluster.uptake[j] as f64, &features.mu[i][j]),
                cluster.outcome[j],
                1.0,
            ));
            mu_groups[a as usize].push(i);
        }
    }
    for arm in [0usize, 1] {
        if mu_rows[arm].is_empty() {
            return Err(Error::ArmMissing { arm: arm as u8 });
        }
    }

    let fit_model = |rows: &[(Vec<f64>, f64, f64)],
                     groups: &[usize],
                     loss: Loss,
                     stream: u64|
     -> Result<Model> {
        match spec.learner {
            LearnerKind::Glm => match loss {
                Loss::LogLoss => Ok(Model::Logistic(fit_logistic(rows)?)),
                Loss::Squared => Ok(Model::Linear(fit_linear(rows)?)),
            },
            LearnerKind::Ensemble => {
                let xs: Vec<Vec<f64>> = rows.iter().map(|(x, _, _)| x.clone()).collect();
                let ys: Vec<f64> = rows.iter().map(|(_, y, _)| *y).collect();
                Ok(Model::Stack(fit_stack(
                    &xs,
                    &ys,
                    groups,
                    &spec.ensemble_members,
                    spec.stack_folds,
                    loss,
                    derive_seed(seed, stream),
                )?))
            }
        }
    };

    let p_model = fit_model(&p_rows, &p_groups, Loss::LogLoss, 1)?;
    let mu0 = fit_model(&mu_rows[0], &mu_groups[0], Loss::Squared, 2)?;
    let mu1 = fit_model(&mu_rows[1], &mu_groups[1], Loss::Squared, 3)?;

    let diagnostics = NuisanceDiagnostics {
        fold_tag: fold_tag.to_string(),
        p: model_diagnostics(&p_model),
        mu_arm0: model_diagnostics(&mu0),
        mu_arm1: model_diagnostics(&mu1),
    };
    Ok(FittedNuisance {
        p_model,
        mu_models: [mu0, mu1],
        p_formula,
        mu_formula,
        clip_eps: spec.clip_eps,
        fold_tag: fold_tag.to_string(),
        diagnostics,
    })
}

/// Fits on all clusters (fold tag "full").
pub fn fit_full(
    dataset: &TrialDataset,
    features: &FeatureTable,
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<FittedNuisance> {
    let all: Vec<usize> = (0..dataset.n_clusters()).collect();
    fit_on_clusters(dataset, features, spec, &all, seed, "full")
}

/// Cluster-level fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    /// Fold index per cluster, parallel to the dataset's cluster order.
    pub cluster_to_fold: Vec<usize>,
}

/// Deterministic pseudo-random partition of clusters into `l` folds,
/// stratified by assignment arm. Fold sizes differ by at most one.
pub fn make_folds(dataset: &TrialDataset, l: usize, seed: u64) -> Result<FoldAssignment> {
    let k = dataset.n_clusters();
    if l < 2 || l > k {
        return Err(Error::TooFewClusters { needed: l, found: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for arm in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..k)
            .filter(|&i| dataset.clusters()[i].assignment == arm)
            .collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut cluster_to_fold = vec![0usize; k];
    for (pos, &i) in order.iter().enumerate() {
        cluster_to_fold[i] = pos % l;
    }
    Ok(FoldAssignment {
        n_folds: l,
        cluster_to_fold,
    })
}

/// Per-fold fitted nuisances; predictions for cluster i must come from the
/// fold containing i (trained on its complement).
#[derive(Debug, Clone)]
pub struct CrossFitted {
    pub fits: Vec<FittedNuisance>,
    pub folds: FoldAssignment,
}

impl CrossFitted {
    /// The out-of-fold nuisance fit for cluster `i`.
    pub fn for_cluster(&self, i: usize) -> &FittedNuisance {
        let fold = self.folds.cluster_to_fold[i];
        let fit = &self.fits[fold];
        debug_assert_eq!(fit.fold_tag, format!("fold-{fold}"));
        fit
    }
}

/// Cross-fits the nuisance surfaces: for each fold, a fit trained on all
/// clusters outside it.
pub fn cross_fit(
    dataset: &TrialDataset,
    features: &FeatureTable,
    spec: &NuisanceSpec,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<CrossFitted> {
    let k = dataset.n_clusters();
    let mut train_sets: Vec<Vec<usize>> = vec![Vec::new(); folds.n_folds];
    for fold in 0..folds.n_folds {
        train_sets[fold] = (0..k).filter(|&i| folds.cluster_to_fold[i] != fold).collect();
    }
    for (fold, train) in train_sets.iter().enumerate() {
        for arm in [0u8, 1u8] {
            if !train
                .iter()
                .any(|&i| dataset.clusters()[i].assignment == arm)
            {
                return Err(Error::FoldDegenerate {
                    fold,
                    reason: format!("training complement has no arm-{arm} clusters"),
                });
            }
        }
        for d in [0u8, 1u8] {
            if !train
                .iter()
                .any(|&i| dataset.clusters()[i].uptake.contains(&d))
            {
                return Err(Error::FoldDegenerate {
                    fold,
                    reason: format!("training complement has no uptake value {d}"),
                });
            }
        }
    }
    let fits: Vec<FittedNuisance> = train_sets
        .par_iter()
        .enumerate()
        .map(|(fold, train)| {
            fit_on_clusters(
                dataset,
                features,
                spec,
                train,
                derive_seed(seed, 100 + fold as u64),
                &format!("fold-{fold}"),
            )
        })
        .collect::<Result<_>>()?;
    Ok(CrossFitted {
        fits,
        folds: folds.clone(),
    })
}

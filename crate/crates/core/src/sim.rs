//! Simulation laboratory: cluster-randomized trial generator with
//! Gaussian-copula correlated uptake and outcomes, covariate
//! misspecification scenarios, a cross-world truth oracle, and a Monte
//! Carlo experiment runner.
//!
//! The generator couples both assignment worlds through one shared latent
//! Gaussian vector per cluster (comonotone coupling), so potential uptake
//! satisfies D(1) >= D(0) pathwise and every individual carries an exact
//! stratum label. Observed data are the world selected by the realized
//! assignment, which reproduces the marginal copula law exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{eval_weight, Cluster, FeatureSummary, TrialDataset, WeightSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    assemble_effects, np_components, theta_dr, theta_mo, var_np, Effect, EifComponents,
};
use crate::inference::{conservative_contrast_variance, percentile_ci, wald_ci, BootstrapConfig};
use crate::nuisance::glm::expit;
use crate::nuisance::{cross_fit, derive_seed, make_folds, FeatureTable, NuisanceSpec};
use crate::score::{MonotonicityMode, Stratum, StratumScheme};

/// Configuration of the trial generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DGPConfig {
    /// Number of clusters per generated trial.
    pub k: usize,
    /// Inclusive range of cluster sizes (discrete uniform).
    pub size_range: (usize, usize),
    /// Exchangeable pairwise correlation of the latent copula normals.
    pub copula_rho: f64,
    /// Cluster-level assignment probability.
    pub pi: f64,
    /// Standard deviation of the outcome around its conditional mean.
    pub outcome_sd: f64,
    /// Constant added to every conditional outcome mean (keeps means
    /// positive for sensitivity fixtures); differences are unaffected.
    pub outcome_offset: f64,
    /// Multiplier applied to the control-arm outcome mean of never-takers.
    /// At 1 principal ignorability holds; at a value s the sensitivity
    /// function alpha equals 1/s identically.
    pub nt_control_scale: f64,
    pub seed: u64,
}

impl Default for DGPConfig {
    fn default() -> Self {
        DGPConfig {
            k: 100,
            size_range: (10, 50),
            copula_rho: 0.1,
            pi: 0.5,
            outcome_sd: 6.0,
            outcome_offset: 0.0,
            nt_control_scale: 1.0,
            seed: 0,
        }
    }
}

/// Covariate misspecification scenario: which nuisance model sees the raw
/// covariates and which sees the transformed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Both models correctly specified.
    A,
    /// Only the outcome model correct (uptake model sees transformed
    /// covariates).
    B,
    /// Only the uptake model correct.
    C,
    /// Both misspecified.
    D,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::A => "a",
            Scenario::B => "b",
            Scenario::C => "c",
            Scenario::D => "d",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "a" => Ok(Scenario::A),
            "b" => Ok(Scenario::B),
            "c" => Ok(Scenario::C),
            "d" => Ok(Scenario::D),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario `{other}` (expected a|b|c|d)"
            ))),
        }
    }
}

/// Latent cross-world record for one cluster.
#[derive(Debug, Clone)]
pub struct ClusterLatents {
    pub d1: Vec<u8>,
    pub d0: Vec<u8>,
    pub strata: Vec<Stratum>,
}

/// Exchangeable standard normal vector: z_j = sqrt(rho) z0 + sqrt(1-rho) e_j.
pub fn exchangeable_normals(rho: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let shared: f64 = StandardNormal.sample(rng);
    let (sr, si) = (rho.sqrt(), (1.0 - rho).sqrt());
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            sr * shared + si * e
        })
        .collect()
}

/// Marginal uptake probability under assignment a.
pub fn uptake_probability(a: u8, n: usize, x: f64, v: f64) -> f64 {
    expit(-8.0 + 4.0 * a as f64 + (1.0 - a as f64) * n as f64 / 50.0 + x + v)
}

/// Conditional outcome mean at (a, d) before any fixture adjustment.
pub fn outcome_mean(a: u8, d: u8, n: usize, x: f64, v: f64) -> f64 {
    let nn = n as f64;
    (0.5 + 3.0 * nn / 100.0 + 1.5 * x) * a as f64
        + (0.2 + 3.0 * nn / 100.0 + 1.5 * x) * d as f64
        + x
        + v
        + nn / 25.0
}

/// Conditional outcome mean including the offset and the never-taker
/// control-arm adjustment.
pub fn adjusted_mean(cfg: &DGPConfig, g: Stratum, a: u8, d: u8, n: usize, x: f64, v: f64) -> f64 {
    let m = outcome_mean(a, d, n, x, v) + cfg.outcome_offset;
    if a == 0 && g == Stratum::Nt {
        cfg.nt_control_scale * m
    } else {
        m
    }
}

/// Standard normal CDF via the complementary error function series is not
/// needed: thresholding Phi(z) <= p is equivalent to z <= Phi^{-1}(p), and
/// comparing on the quantile scale avoids a CDF evaluation.
fn latent_below(z: f64, p: f64) -> bool {
    // clamp to the open interval required by the quantile
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    z <= crate::inference::normal_quantile(p)
}

/// Draws one cluster plus its latent cross-world record.
pub fn draw_cluster(cfg: &DGPConfig, id: &str, rng: &mut ChaCha8Rng) -> (Cluster, ClusterLatents) {
    let (lo, hi) = cfg.size_range;
    let n = rng.gen_range(lo..=hi);
    let v: f64 = Normal::new(3.0 * n as f64 / 50.0, 1.0).unwrap().sample(rng);
    let x: Vec<f64> = (0..n)
        .map(|_| Normal::new(2.0 * v, 1.0).unwrap().sample(rng))
        .collect();
    let a = u8::from(rng.gen_bool(cfg.pi));

    let z_uptake = exchangeable_normals(cfg.copula_rho, n, rng);
    let mut d1 = Vec::with_capacity(n);
    let mut d0 = Vec::with_capacity(n);
    let mut strata = Vec::with_capacity(n);
    for j in 0..n {
        let p1 = uptake_probability(1, n, x[j], v);
        let p0 = uptake_probability(0, n, x[j], v);
        let u1 = u8::from(latent_below(z_uptake[j], p1));
        let u0 = u8::from(latent_below(z_uptake[j], p0));
        strata.push(match (u1, u0) {
            (1, 1) => Stratum::At,
            (1, 0) => Stratum::Co,
            (0, 1) => Stratum::De,
            _ => Stratum::Nt,
        });
        d1.push(u1);
        d0.push(u0);
    }
    let d: Vec<u8> = if a == 1 { d1.clone() } else { d0.clone() };

    let z_outcome = exchangeable_normals(cfg.copula_rho, n, rng);
    let y: Vec<f64> = (0..n)
        .map(|j| {
            adjusted_mean(cfg, strata[j], a, d[j], n, x[j], v) + cfg.outcome_sd * z_outcome[j]
        })
        .collect();

    let cluster = Cluster::new(
        id,
        vec![v],
        x.iter().map(|&xi| vec![xi]).collect(),
        a,
        d,
        y,
    )
    .expect("generated cluster is structurally valid");
    (cluster, ClusterLatents { d1, d0, strata })
}

/// Generates a full trial; errors if the assignment draw leaves an arm
/// empty (possible for very small K).
pub fn generate_trial(cfg: &DGPConfig, seed: u64) -> Result<(TrialDataset, Vec<ClusterLatents>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters = Vec::with_capacity(cfg.k);
    let mut latents = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let (c, l) = draw_cluster(cfg, &format!("sim{i}"), &mut rng);
        clusters.push(c);
        latents.push(l);
    }
    let ds = TrialDataset::new(clusters, cfg.pi)?;
    Ok((ds, latents))
}

/// The transformed covariate triple replacing (X, V, N).
pub fn misspecify_features(x: f64, v: f64, n: f64) -> [f64; 3] {
    [
        (-0.3 * x).exp(),
        v / (1.0 + 0.05 * x),
        (n * v / 25.0 + 0.6).powi(3),
    ]
}

/// Feature table whose p and mu blocks are raw or transformed per the
/// scenario. Raw features are (X, V, N) under the own-covariates summary.
pub fn scenario_features(dataset: &TrialDataset, scenario: Scenario) -> Result<FeatureTable> {
    let raw = FeatureTable::build(dataset, FeatureSummary::Own)?;
    let transform = |block: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
        block
            .iter()
            .map(|cluster| {
                cluster
                    .iter()
                    .map(|feats| misspecify_features(feats[0], feats[1], feats[2]).to_vec())
                    .collect()
            })
            .collect()
    };
    let (p, mu) = match scenario {
        Scenario::A => (raw.p.clone(), raw.mu.clone()),
        Scenario::B => (transform(&raw.p), raw.mu.clone()),
        Scenario::C => (raw.p.clone(), transform(&raw.mu)),
        Scenario::D => (transform(&raw.p), transform(&raw.mu)),
    };
    Ok(FeatureTable { p, mu })
}

/// Estimand truths with Monte Carlo standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct TruthOracleResult {
    /// estimand -> (value, MC standard error)
    pub estimands: BTreeMap<String, (f64, f64)>,
    pub population_size: usize,
}

impl TruthOracleResult {
    pub fn value(&self, estimand: &str) -> Option<f64> {
        self.estimands.get(estimand).map(|&(v, _)| v)
    }
}

/// Streaming accumulator for a ratio of cluster-level sums with an
/// influence-function standard error.
#[derive(Debug, Clone, Copy, Default)]
struct RatioAcc {
    num: f64,
    den: f64,
    num2: f64,
    den2: f64,
    cross: f64,
}

impl RatioAcc {
    fn push(&mut self, num: f64, den: f64) {
        self.num += num;
        self.den += den;
        self.num2 += num * num;
        self.den2 += den * den;
        self.cross += num * den;
    }

    fn ratio_se(&self) -> (f64, f64) {
        let r = self.num / self.den;
        let ss = self.num2 - 2.0 * r * self.cross + r * r * self.den2;
        (r, ss.max(0.0).sqrt() / self.den)
    }
}

/// Evaluates the estimand truths on a simulated super population with known
/// potential outcomes, using the shared-latent coupling for (D(1), D(0)).
pub fn truth_oracle(
    cfg: &DGPConfig,
    population_clusters: usize,
    seed: u64,
    weight_spec: &WeightSpec,
) -> Result<TruthOracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per (stratum, cell) mean accumulators sharing the stratum denominator
    let mut cells: BTreeMap<(Stratum, (u8, u8)), RatioAcc> = BTreeMap::new();
    let mut props: BTreeMap<Stratum, RatioAcc> = BTreeMap::new();
    let mut effects: BTreeMap<String, RatioAcc> = BTreeMap::new();
    let mut itt = RatioAcc::default();
    let strata = [Stratum::Co, Stratum::Nt, Stratum::At];
    for g in strata {
        for &cell in StratumScheme::for_stratum(g).valid_cells() {
            cells.insert((g, cell), RatioAcc::default());
        }
        props.insert(g, RatioAcc::default());
        for e in [Effect::Ice, Effect::Nae, Effect::Pce] {
            effects.insert(e.estimand(g), RatioAcc::default());
        }
    }

    for i in 0..population_clusters {
        let (cluster, lat) = draw_cluster(cfg, &format!("pop{i}"), &mut rng);
        let n = cluster.size();
        let w = eval_weight(weight_spec, n, &cluster.cluster_covariates)?;
        let wn = w / n as f64;
        let mut counts: BTreeMap<Stratum, f64> = BTreeMap::new();
        let mut sums: BTreeMap<(Stratum, (u8, u8)), f64> = BTreeMap::new();
        let mut itt_num = 0.0;
        for j in 0..n {
            let g = lat.strata[j];
            debug_assert_ne!(g, Stratum::De, "comonotone coupling admits no defiers");
            *counts.entry(g).or_default() += 1.0;
            let scheme = StratumScheme::for_stratum(g);
            for &cell in scheme.valid_cells() {
                let d_star = scheme.d_star(cell.1);
                let x = cluster.indiv_covariates[j][0];
                let v = cluster.cluster_covariates[0];
                *sums.entry((g, cell)).or_default() +=
                    adjusted_mean(cfg, g, cell.0, d_star, n, x, v);
            }
            let x = cluster.indiv_covariates[j][0];
            let v = cluster.cluster_covariates[0];
            itt_num += adjusted_mean(cfg, g, 1, lat.d1[j], n, x, v)
                - adjusted_mean(cfg, g, 0, lat.d0[j], n, x, v);
        }
        for g in strata {
            let cnt = counts.get(&g).copied().unwrap_or(0.0);
            props.get_mut(&g).unwrap().push(wn * cnt, w);
            let scheme = StratumScheme::for_stratum(g);
            let cell_num =
                |cell: (u8, u8)| -> f64 { sums.get(&(g, cell)).copied().unwrap_or(0.0) };
            for &cell in scheme.valid_cells() {
                cells
                    .get_mut(&(g, cell))
                    .unwrap()
                    .push(wn * cell_num(cell), wn * cnt);
            }
            // effect numerators share the stratum denominator
            let (ice, nae) = match g {
                Stratum::Co => (
                    cell_num((1, 1)) - cell_num((1, 0)),
                    cell_num((1, 0)) - cell_num((0, 0)),
                ),
                _ => (0.0, cell_num((1, 0)) - cell_num((0, 0))),
            };
            effects
                .get_mut(&Effect::Ice.estimand(g))
                .unwrap()
                .push(wn * ice, wn * cnt);
            effects
                .get_mut(&Effect::Nae.estimand(g))
                .unwrap()
                .push(wn * nae, wn * cnt);
            effects
                .get_mut(&Effect::Pce.estimand(g))
                .unwrap()
                .push(wn * (ice + nae), wn * cnt);
        }
        itt.push(wn * itt_num, w);
    }

    let mut estimands = BTreeMap::new();
    for (name, acc) in effects {
        estimands.insert(name, acc.ratio_se());
    }
    for (g, acc) in props {
        estimands.insert(format!("e_{}", g.label()), acc.ratio_se());
    }
    for ((g, cell), acc) in cells {
        estimands.insert(
            format!("theta_{}({},{})", g.label(), cell.0, cell.1),
            acc.ratio_se(),
        );
    }
    estimands.insert("ITT".to_string(), itt.ratio_se());
    Ok(TruthOracleResult {
        estimands,
        population_size: population_clusters,
    })
}

/// Point estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mo,
    Dr,
    Np,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mo => "mo",
            Method::Dr => "dr",
            Method::Np => "np",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "mo" => Ok(Method::Mo),
            "dr" => Ok(Method::Dr),
            "np" => Ok(Method::Np),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator `{other}` (expected mo|dr|np)"
            ))),
        }
    }
}

/// Monte Carlo experiment configuration.
#[derive(Debug, Clone)]
pub struct MCConfig {
    pub dgp: DGPConfig,
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub strata: Vec<Stratum>,
    pub reps: usize,
    /// Bootstrap replicates for mo/dr intervals; 0 skips them.
    pub bootstrap_b: usize,
    /// Learner for the full-data mo/dr nuisances.
    pub parametric_spec: NuisanceSpec,
    /// Learner for the cross-fitted np nuisances.
    pub np_spec: NuisanceSpec,
    pub l_folds: usize,
    pub weight: WeightSpec,
    pub level: f64,
    pub seed: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            dgp: DGPConfig::default(),
            scenario: Scenario::A,
            methods: vec![Method::Mo, Method::Dr, Method::Np],
            strata: vec![Stratum::Co, Stratum::Nt],
            reps: 500,
            bootstrap_b: 500,
            parametric_spec: NuisanceSpec::glm(),
            np_spec: NuisanceSpec::glm(),
            l_folds: 5,
            weight: WeightSpec::ClusterAverage,
            level: 0.95,
            seed: 0,
        }
    }
}

/// One estimate produced within a replicate.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateEstimate {
    pub rep: usize,
    pub method: Method,
    pub estimand: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Summary row of the Monte Carlo results table.
#[derive(Debug, Clone, Serialize)]
pub struct MCRow {
    pub scenario: String,
    pub method: Method,
    pub estimand: String,
    pub truth: f64,
    pub mc_mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    pub n_success: usize,
    pub failures: usize,
}

/// Full experiment output: summary table plus per-replicate estimates for
/// external plotting.
#[derive(Debug, Clone)]
pub struct MCResults {
    pub rows: Vec<MCRow>,
    pub replicates: Vec<ReplicateEstimate>,
    pub failed_replicates: usize,
}

fn mo_dr_effects(
    cfg: &MCConfig,
    dataset: &TrialDataset,
    seed: u64,
    method: Method,
) -> Result<Vec<(String, f64)>> {
    let features = scenario_features(dataset, cfg.scenario)?;
    let fit = crate::nuisance::fit_full(dataset, &features, &cfg.parametric_spec, seed)?;
    let mode = MonotonicityMode::Standard;
    let mut out = Vec::new();
    for &g in &cfg.strata {
        let mut thetas = BTreeMap::new();
        for &cell in StratumScheme::for_stratum(g).valid_cells() {
            let t = match method {
                Method::Mo => theta_mo(g, cell, dataset, &features, &fit, &cfg.weight, mode)?,
                Method::Dr => theta_dr(g, cell, dataset, &features, &fit, &cfg.weight, mode)?,
                Method::Np => unreachable!("np handled by cross-fitting path"),
            };
            thetas.insert(cell, t);
        }
        for (e, v) in assemble_effects(g, &thetas, mode)? {
            out.push((e.estimand(g), v));
        }
    }
    Ok(out)
}

fn np_effects(
    cfg: &MCConfig,
    dataset: &TrialDataset,
    seed: u64,
) -> Result<Vec<(String, f64, f64)>> {
    let features = scenario_features(dataset, cfg.scenario)?;
    let folds = make_folds(dataset, cfg.l_folds, derive_seed(seed, 7))?;
    let fits = cross_fit(dataset, &features, &cfg.np_spec, &folds, derive_seed(seed, 8))?;
    let mode = MonotonicityMode::Standard;
    let mut out = Vec::new();
    for &g in &cfg.strata {
        let mut comps: BTreeMap<(u8, u8), EifComponents> = BTreeMap::new();
        let mut thetas: BTreeMap<(u8, u8), f64> = BTreeMap::new();
        for &cell in StratumScheme::for_stratum(g).valid_cells() {
            let c = np_components(g, cell, dataset, &features, &fits, &cfg.weight, mode)?;
            thetas.insert(cell, c.theta()?);
            comps.insert(cell, c);
        }
        let cell_sets: &[(Effect, Vec<((u8, u8), f64)>)] = &match g {
            Stratum::Co => vec![
                (Effect::Ice, vec![((1, 1), 1.0), ((1, 0), -1.0)]),
                (Effect::Nae, vec![((1, 0), 1.0), ((0, 0), -1.0)]),
                (Effect::Pce, vec![((1, 1), 1.0), ((0, 0), -1.0)]),
            ],
            _ => vec![
                (Effect::Ice, vec![]),
                (Effect::Nae, vec![((1, 0), 1.0), ((0, 0), -1.0)]),
                (Effect::Pce, vec![((1, 0), 1.0), ((0, 0), -1.0)]),
            ],
        };
        for (effect, cells) in cell_sets {
            if cells.is_empty() {
                out.push((effect.estimand(g), 0.0, 0.0));
                continue;
            }
            let refs: Vec<&EifComponents> = cells.iter().map(|(c, _)| &comps[c]).collect();
            let ts: Vec<f64> = cells.iter().map(|(c, _)| thetas[c]).collect();
            let ls: Vec<f64> = cells.iter().map(|(_, l)| *l).collect();
            let est: f64 = ts.iter().zip(&ls).map(|(t, l)| t * l).sum();
            let var = if cells.len() == 1 {
                var_np(refs[0], ts[0])?
            } else {
                conservative_contrast_variance(&refs, &ts, &ls)?
            };
            out.push((effect.estimand(g), est, var.sqrt()));
        }
    }
    Ok(out)
}

fn run_replicate(cfg: &MCConfig, rep: usize) -> Result<Vec<ReplicateEstimate>> {
    let rep_seed = derive_seed(cfg.seed, 1000 + rep as u64);
    let (dataset, _) = generate_trial(&cfg.dgp, rep_seed)?;
    let mut out = Vec::new();

    for &method in &cfg.methods {
        match method {
            Method::Np => {
                for (estimand, est, se) in np_effects(cfg, &dataset, rep_seed)? {
                    let ci = wald_ci(est, se, cfg.level);
                    out.push(ReplicateEstimate {
                        rep,
                        method,
                        estimand,
                        estimate: est,
                        se: Some(se),
                        ci: Some(ci),
                    });
                }
            }
            Method::Mo | Method::Dr => {
                let point = mo_dr_effects(cfg, &dataset, rep_seed, method)?;
                let mut boots: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                if cfg.bootstrap_b > 0 {
                    let k = dataset.n_clusters();
                    let reps: Vec<Option<Vec<(String, f64)>>> = (0..cfg.bootstrap_b)
                        .map(|b| {
                            let bs = derive_seed(rep_seed, 50_000 + b as u64);
                            let mut rng = ChaCha8Rng::seed_from_u64(bs);
                            let idx: Vec<usize> =
                                (0..k).map(|_| rng.gen_range(0..k)).collect();
                            let resample = dataset.resample(&idx).ok()?;
                            mo_dr_effects(cfg, &resample, bs, method).ok()
                        })
                        .collect();
                    let failed = reps.iter().filter(|r| r.is_none()).count();
                    if failed as f64 > 0.1 * cfg.bootstrap_b as f64 {
                        return Err(Error::TooManyFailedReplicates {
                            failed,
                            total: cfg.bootstrap_b,
                        });
                    }
                    for r in reps.into_iter().flatten() {
                        for (name, v) in r {
                            boots.entry(name).or_default().push(v);
                        }
                    }
                }
                for (estimand, est) in point {
                    let ci = boots
                        .get(&estimand)
                        .map(|dist| percentile_ci(dist, cfg.level))
                        .transpose()?;
                    out.push(ReplicateEstimate {
                        rep,
                        method,
                        estimand,
                        estimate: est,
                        se: None,
                        ci,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Runs the Monte Carlo experiment: parallel replicates with derived seeds,
/// summarized against the oracle truths. Per-replicate failures are counted
/// and excluded from the summaries.
pub fn run_mc_experiment(cfg: &MCConfig, truth: &TruthOracleResult) -> Result<MCResults> {
    let results: Vec<Result<Vec<ReplicateEstimate>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, rep))
        .collect();
    let failed_replicates = results.iter().filter(|r| r.is_err()).count();
    let mut replicates = Vec::new();
    for r in results.into_iter().flatten() {
        replicates.extend(r);
    }

    let mut grouped: BTreeMap<(Method, String), Vec<&ReplicateEstimate>> = BTreeMap::new();
    for r in &replicates {
        grouped
            .entry((r.method, r.estimand.clone()))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::new();
    for ((method, estimand), ests) in grouped {
        let truth_value = truth.value(&estimand).unwrap_or(f64::NAN);
        let n = ests.len();
        let mean = ests.iter().map(|e| e.estimate).sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (ests
                .iter()
                .map(|e| (e.estimate - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        let ses: Vec<f64> = ests.iter().filter_map(|e| e.se).collect();
        let mean_se = if ses.is_empty() {
            None
        } else {
            Some(ses.iter().sum::<f64>() / ses.len() as f64)
        };
        let cis: Vec<(f64, f64)> = ests.iter().filter_map(|e| e.ci).collect();
        let coverage = if cis.is_empty() {
            None
        } else {
            Some(
                cis.iter()
                    .filter(|(lo, hi)| *lo <= truth_value && truth_value <= *hi)
                    .count() as f64
                    / cis.len() as f64,
            )
        };
        rows.push(MCRow {
            scenario: cfg.scenario.label().to_string(),
            method,
            estimand,
            truth: truth_value,
            mc_mean: mean,
            bias: mean - truth_value,
            sd,
            mean_se,
            coverage,
            n_success: n,
            failures: cfg.reps - n.min(cfg.reps),
        });
    }
    Ok(MCResults {
        rows,
        replicates,
        failed_replicates,
    })
}

/// Convenience wrapper building a bootstrap config matching the MC setup.
pub fn bootstrap_config(cfg: &MCConfig, seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        b: cfg.bootstrap_b,
        level: cfg.level,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uptake_probability_fixture() {
        // A=1, X=3, V=2, N=50: -8 + 4 + 0 + 3 + 2 = 1
        let p = uptake_probability(1, 50, 3.0, 2.0);
        assert!((p - expit(1.0)).abs() < 1e-15);
        assert!((p - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn misspecify_fixtures() {
        let u = misspecify_features(0.0, 1.0, 25.0);
        assert!((u[0] - 1.0).abs() < 1e-15);
        assert!((u[1] - 1.0).abs() < 1e-15);
        assert!((u[2] - 4.096).abs() < 1e-12);
        let u = misspecify_features(10.0, 0.0, 25.0);
        assert!((u[0] - (-3.0f64).exp()).abs() < 1e-15);
        assert_eq!(u[1], 0.0);
        assert!((u[2] - 0.216).abs() < 1e-12);
        // not idempotent
        let once = misspecify_features(1.0, 1.0, 20.0);
        let twice = misspecify_features(once[0], once[1], once[2]);
        assert!((once[0] - twice[0]).abs() > 1e-6);
    }

    #[test]
    fn exchangeable_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 100_000;
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..draws {
            let z = exchangeable_normals(0.1, 2, &mut rng);
            sx += z[0];
            sy += z[1];
            sxx += z[0] * z[0];
            syy += z[1] * z[1];
            sxy += z[0] * z[1];
        }
        let n = draws as f64;
        let corr = (sxy / n - sx / n * sy / n)
            / ((sxx / n - (sx / n).powi(2)).sqrt() * (syy / n - (sy / n).powi(2)).sqrt());
        assert!((corr - 0.1).abs() < 0.01, "corr = {corr}");

        // rho = 0: independent
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut sxy, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let z = exchangeable_normals(0.0, 2, &mut rng);
            sx += z[0];
            sy += z[1];
            sxy += z[0] * z[1];
        }
        let corr0 = sxy / n - sx / n * sy / n;
        assert!(corr0.abs() < 0.01, "corr0 = {corr0}");
    }

    #[test]
    fn pathwise_monotonicity_and_no_defiers() {
        let cfg = DGPConfig {
            k: 200,
            ..DGPConfig::default()
        };
        let (_, latents) = generate_trial(&cfg, 11).unwrap();
        for lat in &latents {
            for j in 0..lat.d1.len() {
                assert!(lat.d1[j] >= lat.d0[j]);
                assert_ne!(lat.strata[j], Stratum::De);
            }
        }
    }

    #[test]
    fn generator_deterministic() {
        let cfg = DGPConfig {
            k: 20,
            ..DGPConfig::default()
        };
        let (a, _) = generate_trial(&cfg, 99).unwrap();
        let (b, _) = generate_trial(&cfg, 99).unwrap();
        for (ca, cb) in a.clusters().iter().zip(b.clusters()) {
            assert_eq!(ca.assignment, cb.assignment);
            assert_eq!(ca.uptake, cb.uptake);
            assert_eq!(ca.outcome, cb.outcome);
        }
    }

    #[test]
    fn copula_marginal_fidelity() {
        // empirical P(D=1 | linear-predictor bin) tracks the logistic curve
        let cfg = DGPConfig {
            k: 40_000,
            ..DGPConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bins: Vec<(f64, f64)> = vec![(0.0, 0.0); 12];
        let mut total = 0usize;
        for i in 0..cfg.k {
            if total > 1_000_000 {
                break;
            }
            let (c, _) = draw_cluster(&cfg, &format!("m{i}"), &mut rng);
            let n = c.size();
            let v = c.cluster_covariates[0];
            for j in 0..n {
                let p = uptake_probability(c.assignment, n, c.indiv_covariates[j][0], v);
                let bin = ((p * bins.len() as f64) as usize).min(bins.len() - 1);
                bins[bin].0 += c.uptake[j] as f64;
                bins[bin].1 += 1.0;
                total += 1;
            }
        }
        for (b, &(hits, count)) in bins.iter().enumerate() {
            if count < 5_000.0 {
                continue;
            }
            let center = (b as f64 + 0.5) / bins.len() as f64;
            let se = (center * (1.0 - center) / count).sqrt();
            let emp = hits / count;
            // bin width adds approximation slack beyond the binomial SE
            assert!(
                (emp - center).abs() < 3.0 * se + 0.5 / bins.len() as f64,
                "bin {b}: {emp} vs {center}"
            );
        }
    }

    #[test]
    fn outcome_residual_sd() {
        let cfg = DGPConfig {
            k: 40_000,
            ..DGPConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut ss, mut count) = (0.0, 0usize);
        for i in 0..cfg.k {
            if count > 1_000_000 {
                break;
            }
            let (c, _) = draw_cluster(&cfg, &format!("s{i}"), &mut rng);
            let n = c.size();
            let v = c.cluster_covariates[0];
            for j in 0..n {
                let m = outcome_mean(c.assignment, c.uptake[j], n, c.indiv_covariates[j][0], v);
                ss += (c.outcome[j] - m).powi(2);
                count += 1;
            }
        }
        let sd = (ss / count as f64).sqrt();
        assert!((sd - 6.0).abs() < 0.05, "sd = {sd}");
    }

    #[test]
    fn truth_oracle_identities() {
        let cfg = DGPConfig::default();
        let truth = truth_oracle(&cfg, 4_000, 3, &WeightSpec::ClusterAverage).unwrap();
        let (pce, _) = truth.estimands["PCE_co"];
        let (ice, _) = truth.estimands["ICE_co"];
        let (nae, _) = truth.estimands["NAE_co"];
        assert!((pce - ice - nae).abs() < 1e-12);
        // one-sided strata have zero ICE and PCE == NAE
        assert_eq!(truth.estimands["ICE_nt"].0, 0.0);
        assert_eq!(truth.estimands["PCE_nt"].0, truth.estimands["NAE_nt"].0);
        // proportions sum to one
        let e: f64 = ["e_co", "e_nt", "e_at"]
            .iter()
            .map(|k| truth.estimands[*k].0)
            .sum();
        assert!((e - 1.0).abs() < 1e-10, "sum e_g = {e}");
        // ITT decomposition: sum_g e_g PCE_g
        let decomp: f64 = [("e_co", "PCE_co"), ("e_nt", "PCE_nt"), ("e_at", "PCE_at")]
            .iter()
            .map(|(eg, pg)| truth.estimands[*eg].0 * truth.estimands[*pg].0)
            .sum();
        let (itt, itt_se) = truth.estimands["ITT"];
        assert!(
            (itt - decomp).abs() < 6.0 * itt_se.max(0.01),
            "{itt} vs {decomp}"
        );
    }

    #[test]
    fn truth_oracle_cross_seed_consistency() {
        let cfg = DGPConfig::default();
        let t1 = truth_oracle(&cfg, 5_000, 21, &WeightSpec::ClusterAverage).unwrap();
        let t2 = truth_oracle(&cfg, 5_000, 22, &WeightSpec::ClusterAverage).unwrap();
        for key in ["ICE_co", "NAE_co", "NAE_nt"] {
            let (v1, s1) = t1.estimands[key];
            let (v2, s2) = t2.estimands[key];
            let se = (s1 * s1 + s2 * s2).sqrt();
            assert!((v1 - v2).abs() < 4.0 * se, "{key}: {v1} vs {v2} (se {se})");
        }
    }

    #[test]
    fn scenario_features_wiring() {
        let cfg = DGPConfig {
            k: 6,
            ..DGPConfig::default()
        };
        let (ds, _) = generate_trial(&cfg, 1).unwrap();
        let a = scenario_features(&ds, Scenario::A).unwrap();
        let b = scenario_features(&ds, Scenario::B).unwrap();
        let c = scenario_features(&ds, Scenario::C).unwrap();
        let d = scenario_features(&ds, Scenario::D).unwrap();
        assert_eq!(a.p, c.p);
        assert_eq!(a.mu, b.mu);
        assert_eq!(b.p, d.p);
        assert_eq!(c.mu, d.mu);
        assert_ne!(a.p, b.p);
        assert_ne!(a.mu, c.mu);
        // transformed triple matches the elementwise map
        let raw = &a.p[0][0];
        let expect = misspecify_features(raw[0], raw[1], raw[2]);
        assert_eq!(b.p[0][0], expect.to_vec());
    }

    #[test]
    fn smoke_mc_runs() {
        let cfg = MCConfig {
            dgp: DGPConfig {
                k: 20,
                ..DGPConfig::default()
            },
            reps: 3,
            bootstrap_b: 0,
            methods: vec![Method::Mo, Method::Np],
            strata: vec![Stratum::Co],
            l_folds: 3,
            ..MCConfig::default()
        };
        let truth = truth_oracle(&cfg.dgp, 1_000, 2, &WeightSpec::ClusterAverage).unwrap();
        let res = run_mc_experiment(&cfg, &truth).unwrap();
        assert_eq!(res.failed_replicates, 0);
        // 2 methods x 3 effects for co
        assert_eq!(res.rows.len(), 6);
        for row in &res.rows {
            assert_eq!(row.n_success, 3);
            assert!(row.mc_mean.is_finite());
        }
        // np rows carry ses and coverage; mo rows (no bootstrap) do not
        assert!(res
            .rows
            .iter()
            .filter(|r| r.method == Method::Np)
            .all(|r| r.mean_se.is_some() && r.coverage.is_some()));
        assert!(res
            .rows
            .iter()
            .filter(|r| r.method == Method::Mo)
            .all(|r| r.mean_se.is_none() && r.coverage.is_none()));
    }
}

//! Command-line front end: analysis runs on observed trial data,
//! simulation campaigns, sensitivity grids, and truth-oracle queries.
//!
//! Every command resolves its configuration (file plus flag overrides,
//! flags winning), computes all artifacts in memory, and only then writes
//! the output directory: the data files, the resolved `config.toml`, and a
//! `manifest.json` with the config hash, seed, and library version.
//! Rerunning with the resolved config reproduces every output
//! byte-identically. Exit codes: 0 success, 2 validation failure,
//! 3 estimation failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, CsvSchema, FeatureSummary, TrialDataset, WeightSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    assemble_effects, itt_estimate, np_components, theta_dr, theta_mo, var_np, Effect,
    EifComponents,
};
use crate::inference::{conservative_contrast_variance, percentile_ci, wald_ci};
use crate::nuisance::{
    cross_fit, derive_seed, fit_full, make_folds, FeatureTable, NuisanceSpec,
};
use crate::report::{
    config_hash, write_eif_audit_csv, write_grid_csv, write_json, write_replicates_csv,
    write_results_csv, CiRecord, EifAuditRow, EstimateReport, Manifest, ReportDiagnostics,
};
use crate::score::{check_available, stratum_proportion, MonotonicityMode, Stratum, StratumScheme};
use crate::sensitivity::grid_scan;
use crate::sim::{
    run_mc_experiment, truth_oracle, DGPConfig, MCConfig, Method, Scenario,
};

#[derive(Parser, Debug)]
#[command(
    name = "cluster-compliance",
    version,
    about = "Principal-stratum effect estimation for cluster-randomized trials with noncompliance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate stratum effects on an observed trial dataset.
    Analyze(CommonArgs),
    /// Run a Monte Carlo simulation campaign.
    Simulate(CommonArgs),
    /// Scan bias-corrected effects over a sensitivity grid.
    Sensitivity(CommonArgs),
    /// Evaluate estimand truths on a simulated super population.
    Truth(CommonArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon thread count (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Restricts a simulation to one scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Restricts estimation to one estimator family.
    #[arg(long)]
    estimator: Option<String>,
    /// Overrides the weight specification.
    #[arg(long)]
    weight: Option<String>,
}

fn default_pi() -> f64 {
    0.5
}
fn default_level() -> f64 {
    0.95
}
fn default_l_folds() -> usize {
    5
}
fn default_estimators() -> Vec<String> {
    vec!["mo".into(), "dr".into(), "np".into()]
}
fn default_strata() -> Vec<String> {
    vec!["co".into(), "nt".into()]
}
fn default_mode() -> String {
    "standard".into()
}
fn default_weight() -> String {
    "cluster".into()
}
fn default_learner() -> String {
    "glm".into()
}
fn default_bootstrap_b() -> usize {
    1000
}
fn default_sim_bootstrap_b() -> usize {
    500
}
fn default_reps() -> usize {
    500
}
fn default_k() -> usize {
    100
}
fn default_scenarios() -> Vec<String> {
    vec!["a".into()]
}
fn default_population() -> usize {
    50_000
}
fn default_size_range() -> (usize, usize) {
    (10, 50)
}
fn default_rho() -> f64 {
    0.1
}
fn default_outcome_sd() -> f64 {
    6.0
}
fn default_one() -> f64 {
    1.0
}
fn default_grid_min() -> f64 {
    0.5
}
fn default_grid_max() -> f64 {
    2.0
}
fn default_grid_step() -> f64 {
    0.25
}
fn default_effects() -> Vec<String> {
    vec!["ice".into(), "nae".into(), "pce".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub data: String,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default)]
    pub x_cols: Option<Vec<String>>,
    #[serde(default)]
    pub v_cols: Option<Vec<String>>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_strata")]
    pub strata: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default)]
    pub feature_summary: Option<String>,
    #[serde(default = "default_learner")]
    pub learner: String,
    #[serde(default = "default_l_folds")]
    pub l_folds: usize,
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_strata")]
    pub strata: Vec<String>,
    #[serde(default = "default_sim_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_l_folds")]
    pub l_folds: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_population")]
    pub oracle_population: usize,
    #[serde(default = "default_learner")]
    pub np_learner: String,
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default = "default_size_range")]
    pub size_range: (usize, usize),
    #[serde(default = "default_rho")]
    pub copula_rho: f64,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default = "default_outcome_sd")]
    pub outcome_sd: f64,
    #[serde(default)]
    pub outcome_offset: f64,
    #[serde(default = "default_one")]
    pub nt_control_scale: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub data: String,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default)]
    pub x_cols: Option<Vec<String>>,
    #[serde(default)]
    pub v_cols: Option<Vec<String>>,
    #[serde(default = "default_strata")]
    pub strata: Vec<String>,
    #[serde(default = "default_effects")]
    pub effects: Vec<String>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default = "default_learner")]
    pub learner: String,
    #[serde(default = "default_l_folds")]
    pub l_folds: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid_min")]
    pub alpha_min: f64,
    #[serde(default = "default_grid_max")]
    pub alpha_max: f64,
    #[serde(default = "default_grid_min")]
    pub beta_min: f64,
    #[serde(default = "default_grid_max")]
    pub beta_max: f64,
    #[serde(default = "default_grid_min")]
    pub gamma_min: f64,
    #[serde(default = "default_grid_max")]
    pub gamma_max: f64,
    #[serde(default = "default_grid_step")]
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default = "default_size_range")]
    pub size_range: (usize, usize),
    #[serde(default = "default_rho")]
    pub copula_rho: f64,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default = "default_outcome_sd")]
    pub outcome_sd: f64,
    #[serde(default)]
    pub outcome_offset: f64,
    #[serde(default = "default_one")]
    pub nt_control_scale: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

/// Classifies an error into the documented exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingColumn(_)
        | Error::NonBinary { .. }
        | Error::InconsistentClusterConstant { .. }
        | Error::EmptyFile
        | Error::IndexOutOfRange { .. }
        | Error::NonPositiveWeight(_)
        | Error::TooFewClusters { .. }
        | Error::ArmMissing { .. }
        | Error::StratumUnavailable(_)
        | Error::InvalidCell { .. }
        | Error::InvalidConfig(_)
        | Error::Expr(_)
        | Error::Csv(_)
        | Error::Io(_) => 2,
        Error::SingularDesign
        | Error::FoldDegenerate { .. }
        | Error::ZeroDenominator(_)
        | Error::InsufficientReplicates { .. }
        | Error::TooManyFailedReplicates { .. }
        | Error::MixedStrata
        | Error::NonPositiveDenominator { .. } => 3,
    }
}

/// Entry point used by the binary: parses `std::env::args`.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parses arguments and executes; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with its own success exit
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.command {
        Command::Analyze(c) | Command::Simulate(c) | Command::Sensitivity(c) | Command::Truth(c) => {
            c.clone()
        }
    };
    if let Some(n) = common.threads {
        // a second initialization in-process is harmless: the pool is global
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.command {
        Command::Analyze(c) => cmd_analyze(&c),
        Command::Simulate(c) => cmd_simulate(&c),
        Command::Sensitivity(c) => cmd_sensitivity(&c),
        Command::Truth(c) => cmd_truth(&c),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({
                "error": e.to_string(),
                "kind": if code == 2 { "validation" } else { "estimation" },
            });
            eprintln!("{record}");
            code
        }
    }
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Option<PathBuf>) -> Result<Option<T>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let cfg =
                toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(Some(cfg))
        }
    }
}

fn out_dir(args: &CommonArgs) -> Result<PathBuf> {
    let dir = args
        .out
        .clone()
        .ok_or_else(|| Error::InvalidConfig("--out directory is required".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn parse_mode(s: &str) -> Result<MonotonicityMode> {
    match s {
        "standard" => Ok(MonotonicityMode::Standard),
        "strong" => Ok(MonotonicityMode::Strong),
        other => Err(Error::InvalidConfig(format!(
            "unknown monotonicity mode `{other}` (expected standard|strong)"
        ))),
    }
}

fn parse_stratum(s: &str) -> Result<Stratum> {
    match s {
        "co" => Ok(Stratum::Co),
        "nt" => Ok(Stratum::Nt),
        "at" => Ok(Stratum::At),
        "de" => Ok(Stratum::De),
        other => Err(Error::InvalidConfig(format!(
            "unknown stratum `{other}` (expected co|nt|at)"
        ))),
    }
}

fn parse_effect(s: &str) -> Result<Effect> {
    match s.to_ascii_lowercase().as_str() {
        "ice" => Ok(Effect::Ice),
        "nae" => Ok(Effect::Nae),
        "pce" => Ok(Effect::Pce),
        other => Err(Error::InvalidConfig(format!(
            "unknown effect `{other}` (expected ice|nae|pce)"
        ))),
    }
}

fn parse_learner(s: &str) -> Result<NuisanceSpec> {
    match s {
        "glm" => Ok(NuisanceSpec::glm()),
        "ensemble" => Ok(NuisanceSpec::ensemble()),
        other => Err(Error::InvalidConfig(format!(
            "unknown learner `{other}` (expected glm|ensemble)"
        ))),
    }
}

fn parse_summary(s: &Option<String>) -> Result<FeatureSummary> {
    match s.as_deref() {
        None | Some("own") => Ok(FeatureSummary::Own),
        Some("own_plus_peer_mean") => Ok(FeatureSummary::OwnPlusPeerMean),
        Some(other) => Err(Error::InvalidConfig(format!(
            "unknown feature summary `{other}` (expected own|own_plus_peer_mean)"
        ))),
    }
}

/// Writes the resolved config and manifest alongside the listed outputs.
fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    cfg: &C,
    seed: u64,
    outputs: &[&str],
) -> Result<()> {
    let resolved = toml::to_string_pretty(cfg).expect("serializable config");
    fs::write(dir.join("config.toml"), &resolved)?;
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_sha256: config_hash(&resolved),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn effect_contrast(g: Stratum, effect: Effect) -> Vec<((u8, u8), f64)> {
    match (g, effect) {
        (Stratum::Co, Effect::Ice) => vec![((1, 1), 1.0), ((1, 0), -1.0)],
        (Stratum::Co, Effect::Nae) => vec![((1, 0), 1.0), ((0, 0), -1.0)],
        (Stratum::Co, Effect::Pce) => vec![((1, 1), 1.0), ((0, 0), -1.0)],
        (_, Effect::Ice) => vec![],
        (_, Effect::Nae | Effect::Pce) => vec![((1, 0), 1.0), ((0, 0), -1.0)],
    }
}

struct AnalysisInputs {
    dataset: TrialDataset,
    features: FeatureTable,
    strata: Vec<Stratum>,
    mode: MonotonicityMode,
    weight: WeightSpec,
    spec: NuisanceSpec,
}

fn analysis_inputs(
    data: &str,
    pi: f64,
    x_cols: &Option<Vec<String>>,
    v_cols: &Option<Vec<String>>,
    strata: &[String],
    mode: &str,
    weight: &str,
    summary: &Option<String>,
    learner: &str,
) -> Result<AnalysisInputs> {
    let schema = CsvSchema {
        x_cols: x_cols.clone(),
        v_cols: v_cols.clone(),
    };
    let dataset = load_csv(data, &schema, pi)?;
    let summary = parse_summary(summary)?;
    let features = FeatureTable::build(&dataset, summary)?;
    let mode = parse_mode(mode)?;
    let strata: Vec<Stratum> = strata
        .iter()
        .map(|s| parse_stratum(s))
        .collect::<Result<_>>()?;
    for &g in &strata {
        check_available(g, mode)?;
    }
    Ok(AnalysisInputs {
        dataset,
        features,
        strata,
        mode,
        weight: WeightSpec::parse(weight)?,
        spec: parse_learner(learner)?,
    })
}

/// mo/dr point estimates of all requested effects plus ITT on one dataset.
fn point_effects(
    inputs: &AnalysisInputs,
    dataset: &TrialDataset,
    features: &FeatureTable,
    method: Method,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let fit = fit_full(dataset, features, &inputs.spec, seed)?;
    let mut out = Vec::new();
    for &g in &inputs.strata {
        let mut thetas = BTreeMap::new();
        for &cell in StratumScheme::for_stratum(g).valid_cells() {
            let t = match method {
                Method::Mo => theta_mo(g, cell, dataset, features, &fit, &inputs.weight, inputs.mode)?,
                Method::Dr => theta_dr(g, cell, dataset, features, &fit, &inputs.weight, inputs.mode)?,
                Method::Np => unreachable!(),
            };
            thetas.insert(cell, t);
        }
        for (e, v) in assemble_effects(g, &thetas, inputs.mode)? {
            out.push((e.estimand(g), v));
        }
    }
    out.push(("ITT".to_string(), itt_estimate(dataset, &inputs.weight)?));
    Ok(out)
}

pub fn cmd_analyze(args: &CommonArgs) -> Result<()> {
    let mut cfg: AnalyzeConfig = load_config(&args.config)?
        .ok_or_else(|| Error::InvalidConfig("analyze requires --config".into()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = &args.weight {
        cfg.weight = w.clone();
    }
    if let Some(e) = &args.estimator {
        Method::parse(e)?;
        cfg.estimators = vec![e.clone()];
    }
    let dir = out_dir(args)?;

    let inputs = analysis_inputs(
        &cfg.data, cfg.pi, &cfg.x_cols, &cfg.v_cols, &cfg.strata, &cfg.mode, &cfg.weight,
        &cfg.feature_summary, &cfg.learner,
    )?;
    let methods: Vec<Method> = cfg
        .estimators
        .iter()
        .map(|s| Method::parse(s))
        .collect::<Result<_>>()?;

    let mut reports: Vec<EstimateReport> = Vec::new();
    let mut audit: Vec<EifAuditRow> = Vec::new();

    // shared full-data fit diagnostics
    let full_fit = fit_full(&inputs.dataset, &inputs.features, &inputs.spec, cfg.seed)?;
    let separation = full_fit.diagnostics.p.separation;
    let mut floored_total = 0usize;
    for &g in &inputs.strata {
        let (_, floored) = stratum_proportion(
            g,
            &inputs.dataset,
            &inputs.features,
            &full_fit,
            &inputs.weight,
            inputs.mode,
        )?;
        floored_total += floored;
    }

    for &method in &methods {
        match method {
            Method::Mo | Method::Dr => {
                let point =
                    point_effects(&inputs, &inputs.dataset, &inputs.features, method, cfg.seed)?;
                let mut boots: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                let mut dropped = 0usize;
                if cfg.bootstrap_b >= 100 {
                    let k = inputs.dataset.n_clusters();
                    use rayon::prelude::*;
                    let reps: Vec<Option<Vec<(String, f64)>>> = (0..cfg.bootstrap_b)
                        .into_par_iter()
                        .map(|b| {
                            let bs = derive_seed(cfg.seed, 50_000 + b as u64);
                            let mut rng = ChaCha8Rng::seed_from_u64(bs);
                            let idx: Vec<usize> =
                                (0..k).map(|_| rng.gen_range(0..k)).collect();
                            let resample = inputs.dataset.resample(&idx).ok()?;
                            let features =
                                FeatureTable::build(&resample, FeatureSummary::Own).ok()?;
                            point_effects(&inputs, &resample, &features, method, bs).ok()
                        })
                        .collect();
                    dropped = reps.iter().filter(|r| r.is_none()).count();
                    if dropped as f64 > 0.1 * cfg.bootstrap_b as f64 {
                        return Err(Error::TooManyFailedReplicates {
                            failed: dropped,
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
                    let ci = match boots.get(&estimand) {
                        Some(dist) => {
                            let (lo, hi) = percentile_ci(dist, cfg.level)?;
                            Some(CiRecord {
                                lo,
                                hi,
                                level: cfg.level,
                                method: "percentile".into(),
                                bootstrap_b: Some(cfg.bootstrap_b),
                                bootstrap_dropped: Some(dropped),
                            })
                        }
                        None => None,
                    };
                    reports.push(EstimateReport {
                        estimand,
                        method: method.label().into(),
                        point: est,
                        se: None,
                        ci,
                        diagnostics: ReportDiagnostics {
                            floored_scores: floored_total,
                            separation_flag: separation,
                            fold_seed: None,
                        },
                    });
                }
            }
            Method::Np => {
                let folds = make_folds(&inputs.dataset, cfg.l_folds, derive_seed(cfg.seed, 7))?;
                let fits = cross_fit(
                    &inputs.dataset,
                    &inputs.features,
                    &inputs.spec,
                    &folds,
                    derive_seed(cfg.seed, 8),
                )?;
                for &g in &inputs.strata {
                    let mut comps: BTreeMap<(u8, u8), EifComponents> = BTreeMap::new();
                    let mut thetas: BTreeMap<(u8, u8), f64> = BTreeMap::new();
                    for &cell in StratumScheme::for_stratum(g).valid_cells() {
                        let c = np_components(
                            g,
                            cell,
                            &inputs.dataset,
                            &inputs.features,
                            &fits,
                            &inputs.weight,
                            inputs.mode,
                        )?;
                        for (i, cluster) in inputs.dataset.clusters().iter().enumerate() {
                            audit.push(EifAuditRow {
                                cluster_id: cluster.id.clone(),
                                stratum: g.label().into(),
                                cell_a: cell.0,
                                cell_a_star: cell.1,
                                psi1: c.psi1_cluster[i],
                                psi2: c.psi2_cluster[i],
                            });
                        }
                        thetas.insert(cell, c.theta()?);
                        comps.insert(cell, c);
                    }
                    for effect in [Effect::Ice, Effect::Nae, Effect::Pce] {
                        let cells = effect_contrast(g, effect);
                        let (est, se) = if cells.is_empty() {
                            (0.0, 0.0)
                        } else {
                            let refs: Vec<&EifComponents> =
                                cells.iter().map(|(c, _)| &comps[c]).collect();
                            let ts: Vec<f64> = cells.iter().map(|(c, _)| thetas[c]).collect();
                            let ls: Vec<f64> = cells.iter().map(|(_, l)| *l).collect();
                            let est: f64 = ts.iter().zip(&ls).map(|(t, l)| t * l).sum();
                            let var = if cells.len() == 1 {
                                var_np(refs[0], ts[0])?
                            } else {
                                conservative_contrast_variance(&refs, &ts, &ls)?
                            };
                            (est, var.sqrt())
                        };
                        let (lo, hi) = wald_ci(est, se, cfg.level);
                        reports.push(EstimateReport {
                            estimand: effect.estimand(g),
                            method: "np".into(),
                            point: est,
                            se: Some(se),
                            ci: Some(CiRecord {
                                lo,
                                hi,
                                level: cfg.level,
                                method: "wald".into(),
                                bootstrap_b: None,
                                bootstrap_dropped: None,
                            }),
                            diagnostics: ReportDiagnostics {
                                floored_scores: floored_total,
                                separation_flag: separation,
                                fold_seed: Some(derive_seed(cfg.seed, 7)),
                            },
                        });
                    }
                }
            }
        }
    }

    write_json(&dir.join("analysis.json"), &reports)?;
    write_eif_audit_csv(&dir.join("eif_audit.csv"), &audit)?;
    write_manifest(
        &dir,
        "analyze",
        &cfg,
        cfg.seed,
        &["analysis.json", "eif_audit.csv"],
    )?;
    Ok(())
}

pub fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    let mut cfg: SimulateConfig = load_config(&args.config)?.unwrap_or_default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = &args.weight {
        cfg.weight = w.clone();
    }
    if let Some(s) = &args.scenario {
        Scenario::parse(s)?;
        cfg.scenarios = vec![s.clone()];
    }
    if let Some(e) = &args.estimator {
        Method::parse(e)?;
        cfg.estimators = vec![e.clone()];
    }
    let dir = out_dir(args)?;
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }

    let weight = WeightSpec::parse(&cfg.weight)?;
    let dgp = DGPConfig {
        k: cfg.k,
        size_range: cfg.size_range,
        copula_rho: cfg.copula_rho,
        pi: cfg.pi,
        outcome_sd: cfg.outcome_sd,
        outcome_offset: cfg.outcome_offset,
        nt_control_scale: cfg.nt_control_scale,
        seed: cfg.seed,
    };
    let truth = truth_oracle(&dgp, cfg.oracle_population, derive_seed(cfg.seed, 999), &weight)?;

    let methods: Vec<Method> = cfg
        .estimators
        .iter()
        .map(|s| Method::parse(s))
        .collect::<Result<_>>()?;
    let strata: Vec<Stratum> = cfg
        .strata
        .iter()
        .map(|s| parse_stratum(s))
        .collect::<Result<_>>()?;

    let mut all_rows = Vec::new();
    let mut all_reps = Vec::new();
    for s in &cfg.scenarios {
        let scenario = Scenario::parse(s)?;
        let mc = MCConfig {
            dgp: dgp.clone(),
            scenario,
            methods: methods.clone(),
            strata: strata.clone(),
            reps: cfg.reps,
            bootstrap_b: cfg.bootstrap_b,
            parametric_spec: NuisanceSpec::glm(),
            np_spec: parse_learner(&cfg.np_learner)?,
            l_folds: cfg.l_folds,
            weight: weight.clone(),
            level: cfg.level,
            seed: derive_seed(cfg.seed, Scenario::parse(s)?.label().as_bytes()[0] as u64),
        };
        let results = run_mc_experiment(&mc, &truth)?;
        all_rows.extend(results.rows);
        all_reps.extend(results.replicates);
    }

    write_results_csv(&dir.join("results.csv"), &all_rows)?;
    write_replicates_csv(&dir.join("replicates.csv"), &all_reps)?;
    write_json(&dir.join("truth.json"), &truth)?;
    write_manifest(
        &dir,
        "simulate",
        &cfg,
        cfg.seed,
        &["results.csv", "replicates.csv", "truth.json"],
    )?;
    Ok(())
}

pub fn cmd_sensitivity(args: &CommonArgs) -> Result<()> {
    let mut cfg: SensitivityConfig = load_config(&args.config)?
        .ok_or_else(|| Error::InvalidConfig("sensitivity requires --config".into()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = &args.weight {
        cfg.weight = w.clone();
    }
    let dir = out_dir(args)?;
    if cfg.step <= 0.0 {
        return Err(Error::InvalidConfig("grid step must be positive".into()));
    }
    for (lo, hi, name) in [
        (cfg.alpha_min, cfg.alpha_max, "alpha"),
        (cfg.beta_min, cfg.beta_max, "beta"),
        (cfg.gamma_min, cfg.gamma_max, "gamma"),
    ] {
        if lo <= 0.0 || hi < lo {
            return Err(Error::InvalidConfig(format!(
                "invalid {name} range [{lo}, {hi}]"
            )));
        }
    }

    let inputs = analysis_inputs(
        &cfg.data, cfg.pi, &cfg.x_cols, &cfg.v_cols, &cfg.strata, &cfg.mode, &cfg.weight,
        &None, &cfg.learner,
    )?;
    let effects: Vec<Effect> = cfg
        .effects
        .iter()
        .map(|s| parse_effect(s))
        .collect::<Result<_>>()?;

    let grid_values = |lo: f64, hi: f64| -> Vec<f64> {
        let mut out = Vec::new();
        let mut v = lo;
        while v <= hi + 1e-12 {
            out.push((v * 1e12).round() / 1e12);
            v += cfg.step;
        }
        out
    };
    let alphas = grid_values(cfg.alpha_min, cfg.alpha_max);
    let betas = grid_values(cfg.beta_min, cfg.beta_max);
    let gammas = grid_values(cfg.gamma_min, cfg.gamma_max);

    let folds = make_folds(&inputs.dataset, cfg.l_folds, derive_seed(cfg.seed, 7))?;
    let fits = cross_fit(
        &inputs.dataset,
        &inputs.features,
        &inputs.spec,
        &folds,
        derive_seed(cfg.seed, 8),
    )?;
    let mut rows = Vec::new();
    for &g in &inputs.strata {
        rows.extend(grid_scan(
            g,
            &effects,
            &inputs.dataset,
            &inputs.features,
            &fits,
            &inputs.weight,
            inputs.mode,
            &alphas,
            &betas,
            &gammas,
            cfg.level,
        )?);
    }

    write_grid_csv(&dir.join("grid.csv"), &rows)?;
    write_manifest(&dir, "sensitivity", &cfg, cfg.seed, &["grid.csv"])?;
    Ok(())
}

pub fn cmd_truth(args: &CommonArgs) -> Result<()> {
    let mut cfg: TruthConfig = load_config(&args.config)?.unwrap_or_default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = &args.weight {
        cfg.weight = w.clone();
    }
    let dir = out_dir(args)?;
    if cfg.population < 10_000 {
        return Err(Error::InvalidConfig(
            "oracle population must be at least 10000 clusters".into(),
        ));
    }
    let weight = WeightSpec::parse(&cfg.weight)?;
    let dgp = DGPConfig {
        k: 0,
        size_range: cfg.size_range,
        copula_rho: cfg.copula_rho,
        pi: cfg.pi,
        outcome_sd: cfg.outcome_sd,
        outcome_offset: cfg.outcome_offset,
        nt_control_scale: cfg.nt_control_scale,
        seed: cfg.seed,
    };
    let truth = truth_oracle(&dgp, cfg.population, cfg.seed, &weight)?;
    write_json(&dir.join("truth.json"), &truth)?;
    write_manifest(&dir, "truth", &cfg, cfg.seed, &["truth.json"])?;
    Ok(())
}

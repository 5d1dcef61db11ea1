//! End-to-end command-line tests: output layout, resolved-config reruns,
//! and exit-code discipline.

use std::fs;
use std::path::{Path, PathBuf};

use cluster_compliance::cli::run_from;
use cluster_compliance::sim::{generate_trial, DGPConfig};
use cluster_compliance::write_csv;

fn fixture_csv(dir: &Path) -> PathBuf {
    let (dataset, _) = generate_trial(
        &DGPConfig {
            k: 30,
            ..DGPConfig::default()
        },
        17,
    )
    .unwrap();
    let path = dir.join("trial.csv");
    write_csv(&dataset, &path).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["cluster-compliance"];
    full.extend_from_slice(args);
    run_from(full)
}

#[test]
fn analyze_writes_outputs_and_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = fixture_csv(tmp.path());
    let cfg = tmp.path().join("analyze.toml");
    fs::write(
        &cfg,
        format!("data = {:?}\nbootstrap_b = 120\nseed = 3\n", csv),
    )
    .unwrap();
    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    assert_eq!(
        run(&["analyze", "--config", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()]),
        0
    );
    for name in ["analysis.json", "eif_audit.csv", "config.toml", "manifest.json"] {
        assert!(out1.join(name).exists(), "missing {name}");
    }
    // rerun from the resolved config
    let resolved = out1.join("config.toml");
    assert_eq!(
        run(&["analyze", "--config", resolved.to_str().unwrap(), "--out", out2.to_str().unwrap()]),
        0
    );
    for name in ["analysis.json", "eif_audit.csv", "config.toml", "manifest.json"] {
        assert_eq!(
            fs::read(out1.join(name)).unwrap(),
            fs::read(out2.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let manifest = fs::read_to_string(out1.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"config_sha256\""));
}

#[test]
fn simulate_writes_summary_and_replicates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.toml");
    fs::write(
        &cfg,
        "k = 20\nreps = 3\nbootstrap_b = 0\nestimators = [\"mo\"]\noracle_population = 10000\nseed = 5\n",
    )
    .unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(
        run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        0
    );
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.starts_with("scenario,estimator,estimand,truth,"));
    assert!(results.contains("a,mo,NAE_co"));
    let reps = fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 3 * 6); // 6 estimands per rep
}

#[test]
fn sensitivity_emits_full_cartesian_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = fixture_csv(tmp.path());
    let cfg = tmp.path().join("sens.toml");
    fs::write(
        &cfg,
        format!("data = {:?}\nstrata = [\"co\"]\nstep = 0.75\n", csv),
    )
    .unwrap();
    let out = tmp.path().join("sens");
    assert_eq!(
        run(&["sensitivity", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        0
    );
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    // axis values 0.5, 1.25, 2.0 -> 27 grid points x 3 estimands
    assert_eq!(grid.lines().count(), 1 + 27 * 3);
}

#[test]
fn truth_command_reports_all_estimands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("truth.toml");
    fs::write(&cfg, "population = 10000\nseed = 2\n").unwrap();
    let out = tmp.path().join("truth");
    assert_eq!(
        run(&["truth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        0
    );
    let truth = fs::read_to_string(out.join("truth.json")).unwrap();
    for estimand in ["ICE_co", "NAE_co", "PCE_co", "NAE_nt", "NAE_at", "ITT", "e_co"] {
        assert!(truth.contains(estimand), "missing {estimand}");
    }
}

#[test]
fn validation_failures_exit_2_without_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = fixture_csv(tmp.path());

    // missing config file
    let out = tmp.path().join("a");
    assert_eq!(
        run(&["analyze", "--config", "/nonexistent/x.toml", "--out", out.to_str().unwrap()]),
        2
    );
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());

    // always-takers are unavailable under strong monotonicity
    let cfg = tmp.path().join("strong.toml");
    fs::write(
        &cfg,
        format!("data = {:?}\nmode = \"strong\"\nstrata = [\"at\"]\n", csv),
    )
    .unwrap();
    let out = tmp.path().join("b");
    assert_eq!(
        run(&["analyze", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        2
    );
    assert!(fs::read_dir(&out).unwrap().next().is_none());

    // malformed flag value
    let cfg = tmp.path().join("plain.toml");
    fs::write(&cfg, format!("data = {:?}\n", csv)).unwrap();
    let out = tmp.path().join("c");
    assert_eq!(
        run(&[
            "analyze",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--estimator",
            "bogus",
        ]),
        2
    );

    // truth population below the supported floor
    let cfg = tmp.path().join("truth.toml");
    fs::write(&cfg, "population = 100\n").unwrap();
    let out = tmp.path().join("d");
    assert_eq!(
        run(&["truth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        2
    );
    assert!(fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn flag_overrides_win_over_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.toml");
    fs::write(
        &cfg,
        "k = 20\nreps = 2\nbootstrap_b = 0\nestimators = [\"mo\", \"dr\"]\noracle_population = 10000\nseed = 5\nscenarios = [\"a\", \"b\"]\n",
    )
    .unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(
        run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--scenario",
            "a",
            "--estimator",
            "mo",
            "--seed",
            "9",
        ]),
        0
    );
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 9"));
    assert!(resolved.contains("scenarios = [\"a\"]"));
    assert!(resolved.contains("estimators = [\"mo\"]"));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(!results.contains(",dr,"));
    assert!(!results.lines().skip(1).any(|l| l.starts_with("b,")));
}

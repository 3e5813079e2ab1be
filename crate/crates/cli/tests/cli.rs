use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use evcharge::bilevel::{BilevelSolution, Status};
use evcharge::equilibrium::EquilibriumResult;
use evcharge::market::{assemble_market, Company, StationSet};
use evcharge::policy::PolicyParams;
use serde_json::Value;
use tempfile::TempDir;

fn evcharge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evcharge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EVCHARGE_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = evcharge(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn shenzhen_snapshot(dir: &Path) {
    ok(
        &["scenario", "gen", "--fixture", "shenzhen-like", "--seed", "3", "--out", "s.json"],
        dir,
    );
}

#[test]
fn train_boundary_logs_only_exploration() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["scenario", "fixture", "desk", "--out", "desk.json"], dir);
    ok(
        &["train", "--config", "desk.json", "--iters", "10", "--explore", "10", "--seed", "1", "--out", "run", "--quiet"],
        dir,
    );
    let log = fs::read_to_string(dir.join("run/log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iter,reward,ma100,price_1,price_2,xhat_1,xhat_2,phase");
    assert_eq!(lines.len(), 11);
    assert!(lines[1..].iter().all(|l| l.ends_with(",explore")));
    assert!(!log.contains('\r'));
    for name in ["policy.json", "config.json", "manifest.json"] {
        assert!(dir.join("run").join(name).exists(), "{name}");
    }
    let man = json(&dir.join("run/manifest.json"));
    assert_eq!(man["command"], "train");
    assert_eq!(man["seed"], 1);
    assert_eq!(man["seed_derived"], false);
    assert_eq!(man["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn solve_ne_writes_equilibrium_json() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    shenzhen_snapshot(dir);
    let out = ok(
        &["solve-ne", "--scenario", "s.json", "--prices", "3.39,2.20,2.83,1.58", "--out", "ne.json"],
        dir,
    );
    let res: EquilibriumResult = serde_json::from_str(&fs::read_to_string(dir.join("ne.json")).unwrap()).unwrap();
    assert_eq!(res.x_star.len(), 12);
    assert_eq!(res.x_hat.len(), 4);
    assert!(res.residual <= 1e-8);
    assert!((res.x_hat.sum() - 1.0).abs() < 1e-9);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("reward "));
    assert!(dir.join("ne.json.manifest.json").exists());
}

#[test]
fn bounds_reports_unbounded_coordinate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    // Identical demand vectors leave the price polytope unbounded along 1.
    let market = assemble_market(
        StationSet {
            tau: vec![1.0, 1.0, 1.0],
            c: vec![0.1, 0.2, 0.3],
        },
        vec![
            Company::simplex(30, vec![1.0; 3], vec![1.0; 3], vec![2.0; 3]),
            Company::simplex(50, vec![1.0; 3], vec![0.5; 3], vec![1.0; 3]),
        ],
    )
    .unwrap();
    let mut doc = serde_json::to_value(&market).unwrap();
    doc["Z"] = serde_json::json!([0.3, 0.3, 0.4]);
    fs::write(dir.join("u.json"), doc.to_string()).unwrap();
    let out = evcharge(&["bounds", "--scenario", "u.json", "--out", "b.json"], dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unbounded coordinate"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    for args in [
        vec!["frobnicate"],
        vec!["solve-ne", "--scenario", "s.json", "--prices", "1,2", "--bogus"],
        vec!["solve-ne", "--scenario", "s.json"],
        vec!["train", "--config", "a.json", "--fixture", "desk"],
        vec!["explore", "--scenario", "s.json", "--space", "ball:1"],
        vec!["solve-exact", "--scenario", "s.json", "--beta", "-3"],
    ] {
        let out = evcharge(&args, dir);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_input_is_a_run_failure() {
    let tmp = TempDir::new().unwrap();
    let out = evcharge(&["bounds", "--scenario", "absent.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn snapshot_feeds_every_market_command() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["scenario", "gen", "--fixture", "desk", "--seed", "4", "--out", "d.json"], dir);
    ok(&["bounds", "--scenario", "d.json", "--out", "b.json"], dir);
    let b = json(&dir.join("b.json"));
    let lo = b["box"]["lo"].as_array().unwrap();
    let hi = b["box"]["hi"].as_array().unwrap();
    assert_eq!(lo.len(), 2);
    assert!(lo.iter().zip(hi).all(|(l, h)| l.as_f64() < h.as_f64()));
    assert_eq!(b["lower_vertices"].as_array().unwrap().len(), 2);

    ok(
        &["explore", "--scenario", "d.json", "--space", "box:0,5", "--samples", "20", "--seed", "9", "--jobs", "3", "--out", "ex"],
        dir,
    );
    let csv = fs::read_to_string(dir.join("ex/samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let summary = json(&dir.join("ex/summary.json"));
    assert_eq!(summary["samples"], 20);
    assert_eq!(summary["interior_outside"], 0);
    assert!(dir.join("ex/manifest.json").exists());

    ok(&["solve-exact", "--scenario", "d.json", "--mode", "miqp", "--out", "sol.json"], dir);
    let sol: BilevelSolution = serde_json::from_str(&fs::read_to_string(dir.join("sol.json")).unwrap()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let a = sol.assignment.unwrap();
    assert_eq!(a.m.len(), a.lambda_star.len());
    assert!(!sol.beta_trail.is_empty());

    let prices: Vec<String> = a.pi.iter().map(|v| format!("{v:e}")).collect();
    ok(&["solve-ne", "--scenario", "d.json", "--prices", &prices.join(","), "--out", "ne.json"], dir);
    let ne: EquilibriumResult = serde_json::from_str(&fs::read_to_string(dir.join("ne.json")).unwrap()).unwrap();
    assert!((&ne.x_star - &a.x_star).amax() < 1e-6);
}

#[test]
fn infeasible_exact_solve_writes_solution_and_exits_one() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&["scenario", "gen", "--fixture", "desk", "--seed", "4", "--out", "d.json"], dir);
    let out = evcharge(
        &["solve-exact", "--scenario", "d.json", "--price-box", "0,0.1", "--out", "sol.json"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
    let sol: BilevelSolution = serde_json::from_str(&fs::read_to_string(dir.join("sol.json")).unwrap()).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
    assert!(sol.assignment.is_none());
}

#[test]
fn training_artifacts_round_trip_through_evaluate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        &["train", "--fixture", "desk", "--iters", "12", "--explore", "8", "--batch", "4", "--epochs", "2", "--seed", "5", "--out", "run", "--quiet"],
        dir,
    );
    let params: PolicyParams = serde_json::from_str(&fs::read_to_string(dir.join("run/policy.json")).unwrap()).unwrap();
    assert_eq!((params.n_companies, params.n_stations), (2, 2));
    ok(
        &["evaluate", "--policy", "run/policy.json", "--config", "run/config.json", "--states", "4", "--seed", "2", "--out", "eval.csv"],
        dir,
    );
    let eval = fs::read_to_string(dir.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().next().unwrap(), "t,reward,gap,price_1,price_2,xhat_1,xhat_2");
    assert_eq!(eval.lines().count(), 5);

    // The echoed config also drives a fresh training run.
    ok(
        &["train", "--config", "run/config.json", "--iters", "12", "--explore", "8", "--batch", "4", "--epochs", "2", "--seed", "5", "--out", "again", "--quiet"],
        dir,
    );
    for name in ["log.csv", "policy.json"] {
        assert_eq!(
            fs::read(dir.join("run").join(name)).unwrap(),
            fs::read(dir.join("again").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn shape_mismatch_between_policy_and_scenario_fails() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        &["train", "--fixture", "desk", "--iters", "2", "--explore", "2", "--seed", "5", "--out", "run", "--quiet"],
        dir,
    );
    let out = evcharge(
        &["evaluate", "--policy", "run/policy.json", "--fixture", "shenzhen-like", "--states", "1", "--seed", "0", "--out", "e.csv"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn omitted_seed_is_derived_and_recorded() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = ok(&["scenario", "gen", "--fixture", "desk", "--out", "d.json"], dir);
    assert!(String::from_utf8_lossy(&out.stderr).contains("(derived)"));
    let man = json(&dir.join("d.json.manifest.json"));
    assert_eq!(man["seed_derived"], true);
    let seed = man["seed"].as_u64().unwrap();
    let snap = json(&dir.join("d.json"));
    assert_eq!(snap["seed"].as_u64(), Some(seed));

    ok(&["scenario", "gen", "--fixture", "desk", "--seed", &seed.to_string(), "--out", "again.json"], dir);
    assert_eq!(fs::read(dir.join("d.json")).unwrap(), fs::read(dir.join("again.json")).unwrap());
}

#[test]
fn output_root_comes_from_environment() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("artifacts");
    let out = Command::new(env!("CARGO_BIN_EXE_evcharge"))
        .args(["scenario", "fixture", "desk-symmetric"])
        .current_dir(tmp.path())
        .env("EVCHARGE_OUT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("desk-symmetric.json").exists());
    assert!(root.join("desk-symmetric.json.manifest.json").exists());
}

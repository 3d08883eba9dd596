use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seirdiff"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn edited(name: &str, dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = json(&config(name));
    edit(&mut v);
    let path = dir.join(format!("edited_{name}"));
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_writes_conserving_deterministic_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config("demo.json");
    for dir in [&a, &b] {
        let out = run(&["simulate", cfg.to_str().unwrap()], dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["trajectory.csv", "mass.csv", "config.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let (mut sa, mut sb) = (json(&a.join("summary.json")), json(&b.join("summary.json")));
    sa.as_object_mut().unwrap().remove("runtime_seconds");
    sb.as_object_mut().unwrap().remove("runtime_seconds");
    assert_eq!(sa, sb);
    assert!(sa["relative_drift"].as_f64().unwrap() <= 1e-10);
    assert_eq!(sa["metadata"]["cells"], serde_json::json!([16, 16]));
    assert_eq!(sa["metadata"]["config_sha256"].as_str().unwrap().len(), 64);

    let traj = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert!(lines.next().unwrap().starts_with("# tool=seirdiff-cli"));
    assert_eq!(lines.next().unwrap(), "time,region_id,s,e,i,r,n");
    assert_eq!(data_rows(&a.join("trajectory.csv")).len(), 41 * 4);
    let first = traj.lines().nth(2).unwrap();
    // 17 significant digits
    assert!(first.split(',').next().unwrap().contains("e"));
    assert_eq!(first.split(',').nth(2).unwrap().split('e').next().unwrap().len(), 18);

    let echo = fs::read_to_string(a.join("config.json")).unwrap();
    let reparsed = seirdiff_core::ScenarioConfig::from_json(&echo).unwrap();
    assert_eq!(reparsed.echo() + "\n", echo);
}

#[test]
fn zero_initial_data_gives_all_zero_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited("gradient_1d.json", tmp.path(), |v| {
        v["initial"] = serde_json::json!({"regions": [
            {"s": 0.0, "e": 0.0, "i": 0.0, "r": 0.0}, {"s": 0.0, "e": 0.0, "i": 0.0, "r": 0.0}]});
        v["output"] = serde_json::json!({"trajectory": "cells", "snapshot_every": 10});
    });
    let out_dir = tmp.path().join("out");
    let out = run(&["simulate", cfg.to_str().unwrap()], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&out_dir.join("trajectory.csv"));
    assert_eq!(rows.len(), 21 * 8);
    assert!(rows.iter().all(|r| r[2..].iter().all(|v| *v == 0.0)));
    assert!(out_dir.join("snapshot_000020.csv").exists());
}

#[test]
fn optimize_demo_reaches_projection_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["optimize", config("demo.json").to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = json(&tmp.path().join("controls.json"));
    assert!(c["residual"].as_f64().unwrap() <= 1e-6);
    let entries = c["controls"].as_array().unwrap();
    assert_eq!(entries.len(), 16);
    for e in entries {
        let (u, target) = (e["u"].as_f64().unwrap(), e["target"].as_f64().unwrap());
        assert!((u - target).abs() <= 1e-6);
    }
    assert!(entries.iter().any(|e| e["active_bound"] == "none"));
    let costs: Vec<f64> = data_rows(&tmp.path().join("history.csv")).iter().map(|r| r[1]).collect();
    assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    assert!(tmp.path().join("trajectory.csv").exists());
    assert!(json(&tmp.path().join("summary.json"))["relative_drift"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn optimize_without_infection_selects_lower_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["optimize", config("zero_infection.json").to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    let c = json(&tmp.path().join("controls.json"));
    assert!(c["controls"].as_array().unwrap().iter().all(|e| e["active_bound"] == "lower"));
}

#[test]
fn verify_checks_pass_and_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["verify", config("gradient_1d.json").to_str().unwrap(), "--check", "gradient,duality,conservation"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["gradient", "duality", "conservation"] {
        let r = json(&tmp.path().join(format!("verify_{name}.json")));
        assert_eq!(r["passed"], true);
        assert!(r["metadata"]["tool"].is_string());
    }
    let g = json(&tmp.path().join("verify_gradient.json"));
    assert!(g["measurements"][0]["value"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn failed_check_exits_six() {
    // 40 backward-Euler steps are far too coarse for the 1e-5 ODE tolerance
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", config("demo.json").to_str().unwrap(), "--check", "ode"], tmp.path());
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(json(&tmp.path().join("verify_ode.json"))["passed"], false);
}

#[test]
fn config_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");

    let missing = edited("demo.json", tmp.path(), |v| {
        v["parameters"].as_object_mut().unwrap().remove("sigma");
    });
    let out = run(&["simulate", missing.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));

    let empty = edited("gradient_1d.json", tmp.path(), |v| {
        v["controls"]["lower"]["e"] = serde_json::json!([0.5, 0.1]);
        v["controls"]["upper"]["e"] = serde_json::json!([0.2, 1.0]);
        v["controls"].as_object_mut().unwrap().remove("initial");
    });
    let out = run(&["simulate", empty.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty control interval"));

    let wide = edited("gradient_1d.json", tmp.path(), |v| {
        v["controls"]["upper"]["i"] = serde_json::json!([1.0, 9.0]);
    });
    let out = run(&["simulate", wide.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u_max^{i,2} exceeds kappa_star bound"));

    let broken = tmp.path().join("broken.json");
    fs::write(&broken, "{\n  \"domain\": {\"extents\": [1.0],\n").unwrap();
    let out = run(&["simulate", broken.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let out = run(&["simulate", tmp.path().join("absent.json").to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_and_optimizer_failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let starved = edited("demo.json", tmp.path(), |v| {
        v["solver"] = serde_json::json!({"tolerance": 1e-14, "max_iterations": 1});
    });
    let out = run(&["simulate", starved.to_str().unwrap()], &tmp.path().join("a"));
    assert_eq!(out.status.code(), Some(4));

    let capped = edited("gradient_1d.json", tmp.path(), |v| {
        v["optimizer"] = serde_json::json!({"max_iterations": 1, "tolerance": 1e-12});
    });
    let out = run(&["optimize", capped.to_str().unwrap()], &tmp.path().join("b"));
    assert_eq!(out.status.code(), Some(5));
    assert!(tmp.path().join("b/controls.json").exists());
}

//! End-to-end runs of the `canalnav` binary.

use std::path::Path;
use std::process::{Command, Output};

fn canalnav(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canalnav"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn scenarios() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn short_mission_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = canalnav(dir.path(), &["--ticks", "50", "--seed", "11", "run", "river"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let listed = String::from_utf8(o.stdout).unwrap();
    for name in ["mission_log.csv", "metrics.json", "timing.json", "graph.g2o", "trajectory.dat"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
        assert!(listed.contains(name));
    }
    let m = json(&dir.path().join("metrics.json"));
    assert_eq!((m["ticks"].as_u64(), m["seed"].as_u64()), (Some(50), Some(11)));
    let rows = std::fs::read_to_string(dir.path().join("mission_log.csv")).unwrap().lines().count();
    assert_eq!(rows, 51);
}

#[test]
fn scenario_file_with_pgm_map_runs() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenarios().join("bridge_pgm.json");
    let o = canalnav(dir.path(), &["--ticks", "20", "run", file.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("metrics.json"))["scenario"], "bridge_pgm");
}

/// Noiseless, so reading the initial velocity back from the first row is exact.
#[test]
fn ident_round_trips_through_csv() {
    let sim = tempfile::tempdir().unwrap();
    let o = canalnav(sim.path(), &["ident", "--trials", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("identified"));
    let trials: Vec<String> = (1..=2)
        .map(|k| sim.path().join(format!("ident_trial_{k}.csv")).to_str().unwrap().to_string())
        .collect();

    let rec = tempfile::tempdir().unwrap();
    let mut args = vec!["ident"];
    for t in &trials {
        args.extend(["--csv", t.as_str()]);
    }
    let o = canalnav(rec.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (json(&sim.path().join("ident.json")), json(&rec.path().join("ident.json")));
    for k in ["m11", "xu", "nr"] {
        let (x, y) = (a["identified"][k].as_f64().unwrap(), b["identified"][k].as_f64().unwrap());
        assert!((x - y).abs() < 1e-6 * x.abs(), "{k}: {x} vs {y}");
    }
}

#[test]
fn slam_ablation_reports_all_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let o = canalnav(dir.path(), &["slam-ablation", "--perimeter", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("slam_ablation.json"));
    let names: Vec<&str> = r["results"].as_array().unwrap().iter().map(|x| x["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["odometry", "gps", "loop", "both"]);
    assert!(dir.path().join("slam_both.g2o").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = canalnav(dir.path(), &["--ticks", "20", "sweep", "noise.sigma_pos", "0.1:0.3:3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("noise.sigma_pos,"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "/no/such/scenario.json"][..],
        &["sweep", "no.such.field", "1,2"],
        &["sweep", "seed", "oops"],
        &["ident", "--csv", "/no/such/trial.csv"],
        &["bogus"],
    ] {
        let o = canalnav(dir.path(), args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(!o.stderr.is_empty());
    }
}

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gtua(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtua"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("spawn gtua")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

const SMALL_SWEEP: &[&str] = &["sweep", "--n", "200", "--d", "4", "--trials", "20", "--epsilon-grid", "0,2,20"];

#[test]
fn sweep_is_reproducible_and_writes_manifest() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(code(&gtua(SMALL_SWEEP, a.path())), 0);
    assert_eq!(code(&gtua(SMALL_SWEEP, b.path())), 0);
    for f in ["sweep.csv", "regret.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        header(&a.path().join("sweep.csv")),
        "epsilon_target,epsilon_realized,algo,mean_tests,std_tests,trials,seed"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sweep");
    assert_eq!(manifest["config"]["n"], 200);
    assert!(manifest["checks"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn gbs_rows_do_not_depend_on_divergence() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&gtua(SMALL_SWEEP, dir.path())), 0);
    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let gbs: Vec<String> = reader
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[2] == "GBS")
        .map(|r| format!("{},{}", &r[3], &r[4]))
        .collect();
    assert_eq!(gbs.len(), 3);
    assert!(gbs.iter().all(|g| g == &gbs[0]), "{gbs:?}");
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 50, "d": 2, "trials": 5, "epsilon_grid": [0, 1]}"#).unwrap();
    let out = dir.path().join("out");
    let o = gtua(&["sweep", "--config", cfg.to_str().unwrap(), "--n", "60"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n"], 60);
    assert_eq!(manifest["config"]["trials"], 5);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 50, "bogus": 1}"#).unwrap();
    assert_eq!(code(&gtua(&["sweep", "--config", cfg.to_str().unwrap()], dir.path())), 2);
    assert_eq!(code(&gtua(&["sweep", "--epsilon-grid", "1,-2"], dir.path())), 2);
    std::fs::write(&cfg, "not json").unwrap();
    assert_eq!(code(&gtua(&["replay", "--config", cfg.to_str().unwrap()], dir.path())), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&gtua(&["fit-gmm", "--input", missing.to_str().unwrap()], dir.path())), 3);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "session_id,connection_time\n1,2020-01-01T00:00:00Z\n").unwrap();
    assert_eq!(code(&gtua(&["fit-gmm", "--input", bad.to_str().unwrap()], dir.path())), 3);
}

#[test]
fn failed_checks_exit_4_only_with_check_flag() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&gtua(&["replay", "--samples", "50"], dir.path())), 0);
    let o = gtua(&["replay", "--samples", "50", "--check"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL reduction-band"));
}

#[test]
fn fitted_model_round_trips_through_replay() {
    let dir = TempDir::new().unwrap();
    let o = gtua(&["fit-gmm", "--synthetic", "--seed", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("model.json")).unwrap();
    let model = gtua::gmm::GmmModel::from_json(&text).unwrap();
    assert_eq!(model.to_json().unwrap(), text);
    assert_eq!(header(&dir.path().join("marginals.csv")).split(',').next(), Some("coordinate"));

    let out = dir.path().join("replay");
    let model_path = dir.path().join("model.json");
    let o = gtua(&["replay", "--model", model_path.to_str().unwrap(), "--check"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(header(&out.join("replay-hourly.csv")), "hour,n_users,n_tests,ratio");
}

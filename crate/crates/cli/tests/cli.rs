use std::path::Path;
use std::process::{Command, Output};

fn sim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .current_dir(dir)
        .env_remove("SIM_CALIBRATION")
        .args(args)
        .output()
        .expect("sim runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = sim(dir.path(), &["latency", "--seed", "7", "--reps", "10", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a/latency.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/latency.csv")).unwrap();
    assert_eq!(a, b);
    let svg_a = std::fs::read(dir.path().join("a/latency.svg")).unwrap();
    let svg_b = std::fs::read(dir.path().join("b/latency.svg")).unwrap();
    assert_eq!(svg_a, svg_b);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("experiment,protocol,x_name,x_value,metric,value,unit,seed,calib_hash\n"));
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"name": "latency", "protocols": ["ESB"], "sweep": [2, 244]}"#,
    )
    .unwrap();
    let o = sim(dir.path(), &["latency", "--config", "spec.json", "--out", "."]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("latency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().all(|l| !l.contains(",BLE,")));
}

#[test]
fn invalid_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.json"), r#"{"sweep": [400]}"#).unwrap();
    let o = sim(dir.path(), &["single-packet", "--config", "spec.json"]);
    assert_eq!(code(&o), 2);
    std::fs::write(dir.path().join("other.json"), r#"{"name": "rssi"}"#).unwrap();
    assert_eq!(code(&sim(dir.path(), &["latency", "--config", "other.json"])), 2);
    assert_eq!(code(&sim(dir.path(), &["latency", "--reps", "0"])), 2);
    assert_eq!(code(&sim(dir.path(), &["no-such-command"])), 2);
}

#[test]
fn unknown_experiment_in_targets_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("t.json"),
        r#"{"targets": [{"experiment": "warp", "protocol": "BLE", "metric": "x", "value": 1, "abs_tol": 1, "source": "s"}]}"#,
    )
    .unwrap();
    let o = sim(dir.path(), &["report", "--targets", "t.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp"));
}

#[test]
fn report_passes_and_fails_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let t = |v: f64| {
        format!(
            r#"{{"targets": [{{"experiment": "latency", "protocol": "ESB", "metric": "latency", "x_value": 244, "value": {v}, "rel_tol": 0.1, "source": "s"}}]}}"#
        )
    };
    std::fs::write(dir.path().join("ok.json"), t(680.0)).unwrap();
    std::fs::write(dir.path().join("bad.json"), t(400.0)).unwrap();
    let ok = sim(dir.path(), &["report", "--targets", "ok.json", "--reps", "2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = sim(dir.path(), &["report", "--targets", "bad.json", "--reps", "2"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL latency ESB latency @244"));
}

#[test]
fn report_over_missing_results_says_not_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let o = sim(dir.path(), &["report", "--results", "empty"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("not run"));
}

#[test]
fn plot_handles_empty_and_mismatched_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("empty.csv"),
        "experiment,protocol,x_name,x_value,metric,value,unit,seed,calib_hash\n",
    )
    .unwrap();
    assert_eq!(code(&sim(dir.path(), &["plot", "empty.csv"])), 0);
    let svg = std::fs::read_to_string(dir.path().join("empty.svg")).unwrap();
    assert!(svg.starts_with("<svg") && !svg.contains("polyline"));

    std::fs::write(dir.path().join("wrong.csv"), "experiment,value\nlatency,1\n").unwrap();
    let o = sim(dir.path(), &["plot", "wrong.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("metric"));
}

#[test]
fn calibration_env_var_selects_the_set() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sim"))
        .current_dir(dir.path())
        .env("SIM_CALIBRATION", "broken.json")
        .args(["latency", "--reps", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_sim"))
        .current_dir(dir.path())
        .env("SIM_CALIBRATION", "broken.json")
        .args(["latency", "--reps", "1", "--uncalibrated"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}

use std::process::Command;

fn zorich(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_zorich")).args(args).output().unwrap()
}

#[test]
fn derive_writes_map_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = zorich(&["run", "derive", "--resolution", "64", "--out", out]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let map: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("map.json")).unwrap()).unwrap();
    assert_eq!(map["alpha"], 0.5);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("derive.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn bad_alpha_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = zorich(&["run", "derive", "--alpha", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn unknown_experiment_is_rejected() {
    let res = zorich(&["run", "no-such-thing"]);
    assert_ne!(res.status.code(), Some(0));
}

#[test]
fn classify_reports_basin_for_the_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let res = zorich(&[
        "run",
        "classify",
        "--resolution",
        "64",
        "--point",
        "0,0,-5.7",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(dir.path().join("classify.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("basin"), "{csv}");
}

#[test]
fn failed_invariant_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let res = zorich(&["run", "karpinska", "--resolution", "64", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

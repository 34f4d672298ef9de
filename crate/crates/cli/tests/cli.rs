use std::process::{Command, Output};

fn teardown(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teardown")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_bundled() {
    let o = teardown(&["validate", "--scenario", "samsung"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("L1 7 L2 12 L3 5"), "{}", stdout(&o));
}

#[test]
fn invalid_scenario_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let export = teardown(&["export", "seagate"]);
    assert!(export.status.success());
    let text = stdout(&export).replace("\"tick_s\": 0.1", "\"tick_s\": -1.0");
    std::fs::write(&path, text).unwrap();
    let o = teardown(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("timing.tick_s"), "{}", stderr(&o));

    let o = teardown(&["run", "--scenario", path.to_str().unwrap(), "--trials", "1"]);
    assert_eq!(o.status.code(), Some(1));

    let o = teardown(&["validate", "--scenario", "no_such_drive"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // a file where the output directory should go
    let blocker = dir.path().join("out");
    std::fs::write(&blocker, "").unwrap();
    let o = teardown(&[
        "run",
        "--scenario",
        "samsung",
        "--trials",
        "1",
        "--no-faults",
        "--out",
        blocker.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let o = teardown(&[
        "run",
        "--scenario",
        "western_digital",
        "--trials",
        "2",
        "--seed",
        "5",
        "--arms",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["report.csv", "summary.txt", "trials.csv", "timeline_0000.csv", "timeline_0001.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let timeline = std::fs::read_to_string(out.join("timeline_0000.csv")).unwrap();
    assert!(timeline.starts_with("t_start,t_end,arm,action,target,outcome"));
    assert!(timeline.lines().skip(1).all(|l| l.split(',').nth(2) != Some("tooling")));
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary, stdout(&o));
}

#[test]
fn bad_arguments_are_rejected() {
    let o = teardown(&["run", "--scenario", "samsung", "--arms", "3"]);
    assert!(!o.status.success());
    let o = teardown(&["run", "--scenario", "samsung", "--mode", "medium"]);
    assert!(!o.status.success());
}

#[test]
fn comparisons_print_tables() {
    let o = teardown(&["compare-modes", "--scenario", "samsung", "--trials", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("coarse") && text.contains("fine"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let o = teardown(&[
        "compare-arms",
        "--scenario",
        "seagate",
        "--trials",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("compare_arms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn export_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wd.json");
    let o = teardown(&["export", "western_digital"]);
    assert!(o.status.success());
    std::fs::write(&path, o.stdout).unwrap();
    let o = teardown(&["validate", "--scenario", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("western_digital: ok"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn care(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_care"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn replay_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/replay.toml")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(care(&["--help"]).status.code(), Some(0));
    assert_eq!(care(&["--version"]).status.code(), Some(0));
    assert_eq!(care(&[]).status.code(), Some(1));
    assert_eq!(care(&["sweep"]).status.code(), Some(1));
    assert_eq!(care(&["arbitrate", "a", "b", "--length", "long"]).status.code(), Some(1));
}

#[test]
fn screening_requires_a_length_regime() {
    let dir = tempfile::tempdir().unwrap();
    let out = care(&["calibrate-screen", replay_config().to_str().unwrap(), dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("length"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for cmd in ["report", "fit"] {
        let out = care(&[cmd, d]);
        assert_eq!(out.status.code(), Some(2), "{cmd}: {}", stderr(&out));
        assert!(stderr(&out).contains("run sweep first"), "{}", stderr(&out));
    }
    let out = care(&["sweep", "no/such/config.toml", d]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn degenerate_sweep_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("all_overtake.toml");
    std::fs::write(
        &config,
        r#"
seed = 1
repetitions = 2

[endpoint]
kind = "mock"

[[mock.rules]]
behavior = { kind = "sequence", decisions = ["case1"] }
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    let out = care(&["sweep", config.to_str().unwrap(), o]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = care(&["fit", o]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn replay_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = replay_config();
    let c = config.to_str().unwrap();
    let d = dir.path().to_str().unwrap();

    let out = care(&["calibrate-screen", c, d, "--length", "no-limit"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 12);

    let out = care(&["calibrate-robust", c, d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let out = care(&["sweep", c, d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "120 cells, 3600 rows");

    let out = care(&["fit", d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("converged in "));

    let out = care(&["report", d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("report/report.md")).unwrap();
    assert!(!report.is_empty());

    let out = care(&["validate", d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("144 cells checked, 0 below"), "{}", stdout(&out));

    let out = care(&["arbitrate", c, d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).trim().starts_with("Decision: case"));
    let log = std::fs::read_to_string(dir.path().join("arbitration.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    let queries = entry["queries"].as_u64().unwrap();
    assert!(queries == 2 || queries == 3);

    // a different config against the same results directory is refused
    let other = dir.path().join("other.toml");
    std::fs::write(&other, std::fs::read_to_string(&config).unwrap().replace("seed = 7", "seed = 8")).unwrap();
    std::fs::copy(config.with_file_name("replay_mock.toml"), dir.path().join("replay_mock.toml")).unwrap();
    let out = care(&["sweep", other.to_str().unwrap(), d]);
    assert_ne!(out.status.code(), Some(0));
}

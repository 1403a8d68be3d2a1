use std::path::PathBuf;
use std::process::{Command, Output};

fn cobp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cobp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cobp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn run_hot_cold_writes_a_six_event_trace() {
    let path = scratch("hc.jsonl");
    let out = cobp(&["run", "hot-cold", "--seed", "7", "--trace", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // init entry, six pours, final quiescent entry
    assert_eq!(lines.len(), 8);
    assert!(lines[0].contains("\"status\":\"init\""));
    assert!(lines[7].contains("\"status\":\"quiescent\""));
}

#[test]
fn identical_runs_write_identical_traces() {
    let a = scratch("a.jsonl");
    let b = scratch("b.jsonl");
    for p in [&a, &b] {
        let out = cobp(&["run", "robot", "--seed", "3", "--max-steps", "200", "--trace", p.to_str().unwrap()]);
        assert_eq!(code(&out), 3, "robot never stops on its own");
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn corner_robot_run_exits_with_deadlock() {
    assert_eq!(code(&cobp(&["run", "robot-corner"])), 2);
}

#[test]
fn blinker_from_file_returns_to_its_initial_context() {
    let path = scratch("blinker.jsonl");
    let out = cobp(&["run", "gol", "--ctx", &data("blinker.json"), "--max-steps", "5000", "--trace", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(path).unwrap();
    let digest = |line: &str| -> String {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        v["ctxDigest"].as_str().unwrap().to_owned()
    };
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(digest(lines[0]), digest(lines[lines.len() - 1]));
}

#[test]
fn verify_exit_codes_follow_the_verdict() {
    let report = scratch("verdict.json");
    let out = cobp(&["verify", "gol-dance-buggy", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["outcome"], "violation");
    assert!(!v["counterexample"].as_array().unwrap().is_empty());
    assert!(v["statesVisited"].as_u64().unwrap() > 0);
    assert!(v.get("elapsedMs").is_some());

    assert_eq!(code(&cobp(&["verify", "hotcold-interleave"])), 0);
    assert_eq!(code(&cobp(&["verify", "robot-corner", "--search", "bfs", "--workers", "2"])), 2);
    assert_eq!(code(&cobp(&["verify", "hot-cold", "--max-states", "3"])), 3);
}

#[test]
fn smart_building_verifies_and_reports_states() {
    let out = cobp(&["verify", "smart-building-1room"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("states visited"));
}

#[test]
fn errors_exit_with_one() {
    assert_eq!(code(&cobp(&["run", "no-such-example"])), 1);
    assert_eq!(code(&cobp(&["run", "gol", "--ctx", "/no/such/file.json"])), 1);
    assert_eq!(code(&cobp(&["run", "gol", "--max-steps", "0"])), 1);
    assert_eq!(code(&cobp(&["verify", "gol", "--depth", "0"])), 1);
    assert_eq!(code(&cobp(&["run", "hot-cold", "--arbiter", "fastest"])), 1);
}

#[test]
fn list_names_every_example() {
    let out = cobp(&["list"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["hot-cold", "gol-dance-buggy", "robot-delivery", "smart-building-2room"] {
        assert!(text.contains(name));
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn edgemesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgemesh"))
        .args(args)
        .env("EDGEMESH_LOG", "error")
        .output()
        .unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap()
}

#[test]
fn help_matches_golden_files() {
    let top = edgemesh(&["--help"]);
    assert!(top.status.success());
    assert_eq!(String::from_utf8_lossy(&top.stdout), golden("help.txt"));
    for sub in ["node", "sim", "plan", "report"] {
        let out = edgemesh(&[sub, "--help"]);
        assert!(out.status.success());
        assert_eq!(String::from_utf8_lossy(&out.stdout), golden(&format!("help_{sub}.txt")), "{sub}");
    }
}

#[test]
fn help_enumerates_every_flag() {
    let expected = [
        ("node", vec!["--config"]),
        ("sim", vec!["--scenario", "--out", "--seed"]),
        ("plan", vec!["--instance", "--out"]),
        ("report", vec!["--in"]),
    ];
    for (sub, flags) in expected {
        let text = golden(&format!("help_{sub}.txt"));
        for flag in flags {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
}

#[test]
fn sim_writes_four_artifacts_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let scenario = data("case_study.json");
    let out = edgemesh(&["sim", "--scenario", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["events.csv", "metrics.csv", "summary.json", "timeseries.svg"]);
    // nothing leaks outside --out
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let report = edgemesh(&["report", "--in", out_dir.to_str().unwrap()]);
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout);
    for needle in ["rpi1", "rpi2", "rpi3", "offload"] {
        assert!(text.contains(needle), "report lacks {needle}:\n{text}");
    }
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("case_study.json");
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let out = edgemesh(&["sim", "--scenario", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success());
        std::fs::read(out_dir.join("metrics.csv")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("c", "7"), run("d", "8"));
}

#[test]
fn plan_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("plans/small.json");
    let instance = data("small_instance.json");
    let out = edgemesh(&["plan", "--instance", instance.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(plan["objective"], 3);
    let csv = std::fs::read_to_string(out_path.with_extension("csv")).unwrap();
    assert!(csv.starts_with("slot,microservice,home,host,host_active\n"));
}

#[test]
fn infeasible_plan_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.json");
    let node = |id: &str| serde_json::json!({ "id": id, "capacity": 10.0, "initial_charge": 5.0, "phi": 1.0, "varphi": 0.5, "solar": [0.0, 0.0] });
    let instance = serde_json::json!({ "nodes": [node("a"), node("b")], "T": 2, "m": 3 });
    std::fs::write(&path, instance.to_string()).unwrap();
    let out = edgemesh(&["plan", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "PlanInfeasible");
}

#[test]
fn failures_map_to_exit_codes() {
    let out = edgemesh(&["node", "--config", "/nonexistent/missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "ConfigInvalid");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": 1}").unwrap();
    let out = edgemesh(&["sim", "--scenario", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "ScenarioInvalid");

    let out = edgemesh(&["report", "--in", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(error_line(&out)["error"], "IoError");

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let scenario = data("case_study.json");
    let out = edgemesh(&["sim", "--scenario", scenario.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn exactly_one_subcommand_is_required() {
    assert!(!edgemesh(&[]).status.success());
    assert!(!edgemesh(&["sim", "plan"]).status.success());
}

#[test]
fn logs_are_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let config = data("nodes/rpi1.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config).unwrap()).unwrap();
    cfg["controller_bind"] = "127.0.0.1:0".into();
    cfg["service_bind"] = "127.0.0.1:0".into();
    cfg["peers"] = serde_json::json!({ "kind": "endpoints", "endpoints": [] });
    let path = dir.path().join("node.json");
    std::fs::write(&path, cfg.to_string()).unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_edgemesh"))
        .args(["node", "--config", path.to_str().unwrap()])
        .env("EDGEMESH_LOG", "info")
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(1500));
    child.kill().unwrap();
    let out = child.wait_with_output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert!(!lines.is_empty());
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {line}"));
        assert!(v.get("level").is_some());
    }
    assert!(stderr.contains("node up"));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Killed(std::process::Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn two_node_processes_offload_and_actuate_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let ports: Vec<u16> = (0..4).map(|_| free_port()).collect();
    let services = [format!("127.0.0.1:{}", ports[1]), format!("127.0.0.1:{}", ports[3])];
    let mut children = Vec::new();
    for (i, charge) in [(0usize, 40.0), (1, 90.0)] {
        let mut cfg: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(data("nodes/rpi1.json")).unwrap()).unwrap();
        cfg["node_id"] = format!("proc{i}").into();
        cfg["controller_bind"] = format!("127.0.0.1:{}", ports[2 * i]).into();
        cfg["service_bind"] = services[i].clone().into();
        cfg["peers"] = serde_json::json!({ "kind": "endpoints", "endpoints": services });
        cfg["adapters"]["energy"] = serde_json::json!({ "kind": "virtual", "capacity": 100.0, "initial_charge": charge });
        cfg["policy"]["loop_period_ms"] = 200.into();
        cfg["sensors"][0]["period_ms"] = 200.into();
        cfg["workloads"]["bird-deterrent:1.0"]["service_time_ms"] = 50.into();
        let path = dir.path().join(format!("proc{i}.json"));
        std::fs::write(&path, cfg.to_string()).unwrap();
        children.push(Killed(
            Command::new(env!("CARGO_BIN_EXE_edgemesh"))
                .args(["node", "--config", path.to_str().unwrap()])
                .env("EDGEMESH_LOG", "error")
                .spawn()
                .unwrap(),
        ));
    }

    let http = reqwest::Client::new();
    let log_url = format!("http://{}/actuate/deterrent", services[0]);
    let presence_url = format!("http://{}/presence", services[1]);
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(15);
    let mut remote_actuations = 0;
    while std::time::Instant::now() < deadline && remote_actuations < 3 {
        tokio::time::sleep(std::time::Duration::from_millis(200)).await;
        let Ok(resp) = http.get(&log_url).send().await else { continue };
        let log: Vec<serde_json::Value> = resp.json().await.unwrap_or_default();
        remote_actuations = log.iter().filter(|r| r["workload_id"].as_str().is_some_and(|w| w.starts_with("proc1-"))).count();
    }
    assert!(remote_actuations >= 3, "source saw {remote_actuations} actuations from the remote workload");
    let presence: serde_json::Value = http.get(&presence_url).send().await.unwrap().json().await.unwrap();
    let hosted: Vec<&str> = presence["exec_status"].as_array().unwrap().iter().filter_map(|v| v.as_str()).collect();
    assert!(hosted.contains(&format!("bird-deterrent:1.0@{}", services[0]).as_str()), "{hosted:?}");
    drop(children);
}

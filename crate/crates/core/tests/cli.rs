use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn timem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timem"))
        .args(args)
        .env_remove("TIMEM_DATA_DIR")
        .env_remove("TIMEM_API_KEY")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&timem(&[])), 1);
    assert_eq!(code(&timem(&["recall", "where?"])), 1);
    assert_eq!(
        code(&timem(&["recall", "--user", "u", "--complexity-override", "hard", "x"])),
        1
    );
    assert_eq!(code(&timem(&["--help"])), 0);
    assert_eq!(code(&timem(&["--version"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"user_id\": \"u\", \"sessions\": [], \"extra\": 1}").unwrap();
    let out = timem(&["--data-dir", data, "ingest", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let missing = dir.path().join("missing.json");
    assert_eq!(
        code(&timem(&["--data-dir", data, "ingest", missing.to_str().unwrap()])),
        2
    );

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "lambda = 1.5\n").unwrap();
    assert_eq!(code(&timem(&["--config", config.to_str().unwrap(), "config-dump"])), 2);
}

#[test]
fn http_backend_without_server_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("http.toml");
    std::fs::write(
        &config,
        "backend = \"http\"\nhttp_base_url = \"http://127.0.0.1:9\"\nhttp_max_retries = 0\nhttp_timeout_secs = 2\n",
    )
    .unwrap();
    let transcript = fixtures().join("ten_sessions.json");
    let out = timem(&[
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "ingest",
        transcript.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_recall_validate_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let transcript = fixtures().join("ten_sessions.json");
    let out = timem(&[
        "--data-dir",
        data,
        "--output",
        "json",
        "ingest",
        transcript.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let line: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(line["turns"], 85);

    let out = timem(&[
        "--data-dir",
        data,
        "--output",
        "json",
        "recall",
        "--user",
        "demo",
        "Where does Alex work?",
    ]);
    assert_eq!(code(&out), 0);
    let result: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(!result["memories"].as_array().unwrap().is_empty());

    let out = timem(&["--data-dir", data, "recall", "--user", "nobody", "hi?"]);
    assert_eq!(code(&out), 2);

    let out = timem(&["--data-dir", data, "validate"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    let out = timem(&["--data-dir", data, "--output", "json", "analyze"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn bench_report_is_reproducible() {
    let bench = fixtures().join("bench_seed42");
    let mut args = vec![
        "--output".to_string(),
        "json".into(),
        "bench".into(),
        "--no-timing".into(),
        "--questions".into(),
        bench.join("questions.jsonl").display().to_string(),
    ];
    for u in ["user1", "user2", "user3"] {
        args.push(bench.join(format!("{u}.json")).display().to_string());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let first = timem(&args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = timem(&args);
    assert_eq!(first.stdout, second.stdout);
    assert!(!stdout(&first).contains("latency"));
}

#[test]
fn config_dump_prints_defaults() {
    let out = timem(&["config-dump"]);
    assert_eq!(code(&out), 0);
    let config = timem_core::config::Config::from_toml(&stdout(&out)).unwrap();
    assert_eq!(config, timem_core::config::Config::default());
}

#[test]
fn gen_fixture_matches_checked_in_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = timem(&[
        "gen-fixture",
        "--kind",
        "ten-session",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let fresh = std::fs::read(dir.path().join("ten_sessions.json")).unwrap();
    assert_eq!(fresh, std::fs::read(fixtures().join("ten_sessions.json")).unwrap());

    let out = timem(&["gen-fixture", "--seed", "42", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    for name in ["questions.jsonl", "user1.json", "user2.json", "user3.json"] {
        let fresh = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(
            fresh,
            std::fs::read(fixtures().join("bench_seed42").join(name)).unwrap(),
            "{name}"
        );
    }
}

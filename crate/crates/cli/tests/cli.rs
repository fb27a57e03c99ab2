use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn evocode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evocode"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Chat endpoint that always answers with the same completion.
fn stub_chat(completion: &str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": completion}}],
        "usage": {"prompt_tokens": 30, "completion_tokens": 10}
    })
    .to_string();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0u8; len];
            let _ = reader.read_exact(&mut buf);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    url
}

fn write_fixture(dir: &Path, chat_url: &str) {
    std::fs::write(
        dir.join("config.toml"),
        format!("[roles.generator]\nbase_url = \"{chat_url}\"\nmodel = \"stub\"\n\n[run]\nmax_iterations = 3\n"),
    )
    .unwrap();
    let problems = [
        r#"{"id":"hello","description":"Print hello.","profile":"sh","tests":[{"input":"","expected":"hello"}],"gold_program":"echo hello","dataset":"Demo"}"#,
        r#"{"id":"bye","description":"Print bye.","profile":"sh","tests":[{"input":"","expected":"bye"}],"gold_program":"echo bye","dataset":"Demo"}"#,
    ];
    std::fs::write(dir.join("data.jsonl"), problems.join("\n")).unwrap();
    std::fs::create_dir_all(dir.join("docs")).unwrap();
    std::fs::write(dir.join("docs/echo.md"), "# echo\n\necho prints its arguments.\n").unwrap();
}

#[test]
fn mutate_one_input_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.txt");
    std::fs::write(&path, "5\n").unwrap();
    let out = evocode(&["mutate", "--in", path.to_str().unwrap(), "--target", "3", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<i64> = stdout(&out).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], 5);
    assert!(lines.iter().all(|v| (v - 5).abs() <= 2));
    assert_eq!(stdout(&out), stdout(&evocode(&["mutate", "--in", path.to_str().unwrap(), "--target", "3", "--seed", "1"])));
}

#[test]
fn mutate_multi_line_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.txt");
    std::fs::write(&path, "2\n1 2\n---\n3\n4 5 6\n").unwrap();
    let out = evocode(&["mutate", "--in", path.to_str().unwrap(), "--target", "6"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let blocks: Vec<&str> = text.split("---\n").collect();
    assert_eq!(blocks.len(), 6);
    assert_eq!(blocks[0], "2\n1 2\n");
    assert_eq!(blocks[1], "3\n4 5 6\n");
}

#[test]
fn ingest_builds_a_store() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), "http://127.0.0.1:9");
    let kb = dir.path().join("kb.json");
    let out = evocode(&["ingest", "--docs", dir.path().join("docs").to_str().unwrap(), "--kb", kb.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("documentation: 1 new items"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&kb).unwrap()).unwrap();
    assert_eq!(v["items"][0]["kind"], "documentation");
    assert!(!evocode(&["ingest", "--kb", kb.to_str().unwrap()]).status.success());
}

#[test]
fn bench_and_solve_against_a_stub_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let url = stub_chat("```sh\necho hello\n```");
    write_fixture(dir.path(), &url);
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let out = evocode(&[
        "bench", "--dataset", &d("data.jsonl"), "--kb", &d("docs"), "--modes", "vanilla,full",
        "--out", &d("report.json"), "--validate", "--config", &d("config.toml"), "--traces-out", &d("traces.jsonl"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("report.json")).unwrap()).unwrap();
    let aggregates = report["aggregates"].as_array().unwrap();
    assert_eq!(aggregates.len(), 2);
    assert!(aggregates.iter().all(|m| m["pass_at_1"] == 50.0));
    let md = std::fs::read_to_string(d("report.md")).unwrap();
    assert!(md.contains("| vanilla | 50.0 | 50.0 |"));
    assert_eq!(std::fs::read_to_string(d("traces.jsonl")).unwrap().lines().count(), 4);

    let out = evocode(&[
        "bench", "--dataset", &d("data.jsonl"), "--kb", &d("docs"), "--modes", "vanilla",
        "--out", &d("t.json"), "--config", &d("config.toml"), "--pass-at-t",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("t.json")).unwrap()).unwrap();
    let rates: std::collections::BTreeMap<u64, f64> =
        serde_json::from_value(report["aggregates"][0]["pass_at_t"].clone()).unwrap();
    let keys: Vec<u64> = rates.keys().copied().collect();
    assert_eq!(keys, [4000, 8000, 12000, 16000, 20000, 24000]);
    assert!(rates.values().all(|v| *v == 50.0));
    assert!(std::fs::read_to_string(d("t.md")).unwrap().contains("pass@4000"));

    let out = evocode(&[
        "solve", "--problem", "hello", "--dataset", &d("data.jsonl"), "--kb", &d("docs"), "--mode", "full",
        "--config", &d("config.toml"), "--max-iterations", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(trace["termination"], "success");
    assert_eq!(trace["final_program"], "echo hello");
    assert!(String::from_utf8_lossy(&out.stderr).contains("passed"));
}

#[test]
fn solve_without_endpoints_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), "http://127.0.0.1:9");
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = evocode(&["solve", "--problem", "hello", "--dataset", &d("data.jsonl"), "--kb", &d("docs")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("roles.generator"));
    let out = evocode(&["solve", "--problem", "nope", "--dataset", &d("data.jsonl"), "--kb", &d("docs")]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no problem"));
}

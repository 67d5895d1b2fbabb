use serde_json::Value;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn valuelens(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valuelens"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout={} stderr={}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// The demo config rewritten to absolute inputs and a private workdir.
fn demo_config(dir: &Path) -> PathBuf {
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(demo().join("config.json")).unwrap())
            .unwrap();
    let abs = |name: &str| Value::from(demo().join(name).canonicalize().unwrap().to_str().unwrap());
    cfg["paths"]["corpus"] = abs("documents.jsonl");
    cfg["paths"]["keywords"] = abs("lexicon.csv");
    cfg["glm"]["mock"] = abs("mock_glm.json");
    cfg["paths"]["workdir"] = Value::from(dir.join("work").to_str().unwrap());
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn validate_config_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let ok = valuelens(
        &["--config", cfg.to_str().unwrap(), "validate-config"],
        dir.path(),
    );
    assert_eq!(ok.status.code(), Some(0));

    let mut broken: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    broken["sample"]["rates"]
        .as_object_mut()
        .unwrap()
        .remove("3");
    broken["paths"]["keywords"] = Value::from("/nonexistent/lexicon.csv");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, broken.to_string()).unwrap();
    let out = valuelens(
        &["--config", bad.to_str().unwrap(), "validate-config"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tier 3"), "{err}");
    assert!(err.contains("lexicon.csv"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        valuelens(&["no-such-command"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(valuelens(&["annotate"], dir.path()).status.code(), Some(1));
    assert_eq!(valuelens(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn annotate_before_sample_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let out = valuelens(&["--config", cfg.to_str().unwrap(), "annotate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run stage `sample` first"));
}

#[test]
fn run_then_rerun_skips_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let first = valuelens(&["--config", cfg, "run"], dir.path());
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let summaries = stdout_json(&first);
    assert_eq!(summaries.as_array().unwrap().len(), 9);
    assert!(summaries
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["status"] == "ran"));
    let predictions = std::fs::read_to_string(dir.path().join("work/predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 100);

    let second = stdout_json(&valuelens(&["--config", cfg, "run"], dir.path()));
    assert!(second
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["status"] == "skipped"));

    let retrain = stdout_json(&valuelens(
        &["--config", cfg, "train", "--seed", "99"],
        dir.path(),
    ));
    assert_eq!(retrain[0]["status"], "ran");

    let cost = stdout_json(&valuelens(&["--config", cfg, "cost-estimate"], dir.path()));
    assert_eq!(cost["n_calls"], 100);
}

#[test]
fn standalone_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let docs = demo().join("documents.jsonl");
    let lex = demo().join("lexicon.csv");
    let mock = demo().join("mock_glm.json");
    let steps: Vec<Vec<&str>> = vec![
        vec![
            "ingest",
            "--input",
            docs.to_str().unwrap(),
            "--out",
            "store.jsonl",
        ],
        vec![
            "filter",
            "--keywords",
            lex.to_str().unwrap(),
            "--corpus",
            "store.jsonl",
            "--out",
            "m.jsonl",
        ],
        vec![
            "sample",
            "--matches",
            "m.jsonl",
            "--rates",
            "1,1,1,1",
            "--seed",
            "5",
            "--out",
            "ids.txt",
        ],
        vec![
            "annotate",
            "--sample",
            "ids.txt",
            "--corpus",
            "store.jsonl",
            "--out",
            "a.jsonl",
            "--mock",
            mock.to_str().unwrap(),
        ],
        vec![
            "train",
            "--annotations",
            "a.jsonl",
            "--corpus",
            "store.jsonl",
            "--task",
            "2class",
            "--seed",
            "1",
            "--out",
            "m.json",
        ],
        vec![
            "predict",
            "--model",
            "m.json",
            "--corpus",
            "store.jsonl",
            "--out",
            "p.jsonl",
        ],
    ];
    for args in &steps {
        let out = valuelens(args, d);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let report = stdout_json(&valuelens(
        &[
            "eval-external",
            "--predictions",
            "p.jsonl",
            "--dataset",
            "m.dataset.json",
        ],
        d,
    ));
    assert_eq!(report["macro_f1"], 1.0);
    let first = std::fs::read_to_string(d.join("p.jsonl")).unwrap();
    let line: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(["PVE", "NO_PVE"].contains(&line["label"].as_str().unwrap()));

    let rerun = stdout_json(&valuelens(&steps[3], d));
    assert_eq!(rerun["cached"], 100);
    assert_eq!(rerun["done"], 0);

    let missing = valuelens(&["topics", "--annotations", "none.jsonl", "--seed", "1"], d);
    assert_eq!(missing.status.code(), Some(2));
}

fn http(port: u16, request: &str) -> String {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).unwrap();
    buf
}

#[test]
fn serve_review_answers_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run = valuelens(
        &[
            "--config",
            cfg,
            "run",
            "--stages",
            "ingest,filter,sample,annotate",
        ],
        dir.path(),
    );
    assert_eq!(run.status.code(), Some(0));

    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_valuelens"))
        .args([
            "--config",
            cfg,
            "serve-review",
            "--batch-size",
            "10",
            "--seed",
            "1",
            "--port",
            &port.to_string(),
        ])
        .env("VALUELENS_REVIEW_TOKEN", "tok")
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut line = String::new();
    while Instant::now() < deadline {
        line.clear();
        if stderr.read_line(&mut line).unwrap() == 0 || line.contains("listening") {
            break;
        }
    }
    assert!(line.contains("listening"), "server did not start: {line}");

    let batches = http(
        port,
        "GET /api/v1/batches HTTP/1.1\r\nHost: x\r\nAuthorization: Bearer tok\r\nConnection: close\r\n\r\n",
    );
    let unauthorized = http(
        port,
        "GET /api/v1/batches HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n",
    );
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(batches.starts_with("HTTP/1.1 200"), "{batches}");
    let body = batches.split("\r\n\r\n").nth(1).unwrap();
    let ids: Vec<String> = serde_json::from_str(body).unwrap();
    assert_eq!(ids.len(), 1);
    assert!(unauthorized.starts_with("HTTP/1.1 401"), "{unauthorized}");
}

use super::*;
use crate::corpus::Section;

use crate::framework::{canonical_suffix, default_framework};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::AtomicUsize;

fn sentence(i: usize, text: &str) -> Sentence {
    Sentence {
        sent_id: format!("D{i:03}/abstract/0000"),
        doc_id: format!("D{i:03}"),
        section: Section::Abstract,
        ordinal: 0,
        text: text.to_string(),
    }
}

fn config(max_concurrent: usize) -> GlmConfig {
    GlmConfig {
        model: "mock".into(),
        max_concurrent,
        ..GlmConfig::default()
    }
}

fn manual() -> Arc<ManualClock> {
    Arc::new(ManualClock::epoch())
}

fn ok(content: &str) -> Result<Completion, ClientError> {
    Ok(Completion {
        content: content.to_string(),
        prompt_tokens: 10,
        completion_tokens: 5,
    })
}

#[test]
fn parse_canonical_suffix() {
    let text = "Let's think step by step. It protects privacy. Based on these considerations, I would categorize this sentence as: Direct PVE.";
    let (label, rationale) = parse_response(text).unwrap();
    assert_eq!(label, Label::DirectPve);
    assert_eq!(rationale, text);
}

#[test]
fn parse_alias_and_case() {
    let (label, _) = parse_response("...I would CATEGORIZE this sentence as: No-PVE").unwrap();
    assert_eq!(label, Label::NoPve);
    let (label, _) = parse_response("categorize this sentence as: **contextual pve**").unwrap();
    assert_eq!(label, Label::ContextualPve);
}

#[test]
fn parse_uses_last_occurrence() {
    let text = "If I categorize this sentence as: Direct PVE, that ignores N1. \
                I would categorize this sentence as: No PVE.";
    assert_eq!(parse_response(text).unwrap().0, Label::NoPve);
}

#[test]
fn parse_failures() {
    assert_eq!(
        parse_response("The sentence is about sensors."),
        Err(ParseError::MissingPattern)
    );
    assert!(matches!(
        parse_response("I would categorize this sentence as: maybe"),
        Err(ParseError::UnknownLabel(_))
    ));
}

#[test]
fn parse_recovers_default_exemplar_labels() {
    let spec = default_framework();
    for e in &spec.exemplars {
        let turn = e.assistant_turn(&spec.cot_trigger);
        assert_eq!(parse_response(&turn).unwrap().0, e.label, "{}", e.sentence);
    }
}

#[test]
fn annotate_and_cache_hit() {
    let spec = default_framework();
    let client = FnClient(|_: &ChatRequest<'_>| ok(&canonical_suffix(Label::DirectPve)));
    let calls = AtomicUsize::new(0);
    let counting = FnClient(|r: &ChatRequest<'_>| {
        calls.fetch_add(1, Ordering::SeqCst);
        client.complete(r)
    });
    let annotator = Annotator::with_clock(counting, config(1), manual());
    let cache = AnnotationCache::in_memory();
    let s = sentence(1, "It prevents private information inferencing.");
    let first = annotator.annotate(&s, &spec, &cache).unwrap();
    assert_eq!(first.label, Label::DirectPve);
    assert_eq!(first.prompt_hash, assemble_prompt(&spec, &s.text).hash());
    assert_eq!(first.ts, "1970-01-01T00:00:00Z");
    let second = annotator.annotate(&s, &spec, &cache).unwrap();
    assert_eq!(first, second);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn cache_hit_for_other_sentence_id_keeps_request_id() {
    let spec = default_framework();
    let mock = MockClient::new(vec![], Label::NoPve);
    let annotator = Annotator::with_clock(&mock, config(1), manual());
    let cache = AnnotationCache::in_memory();
    annotator
        .annotate(&sentence(1, "Same text."), &spec, &cache)
        .unwrap();
    let hit = annotator
        .annotate(&sentence(2, "Same text."), &spec, &cache)
        .unwrap();
    assert_eq!(hit.sent_id, "D002/abstract/0000");
    assert_eq!(mock.calls(), 1);
}

#[test]
fn garbage_twice_is_unparseable_with_raw() {
    let spec = default_framework();
    let mock = MockClient {
        garbage: vec!["sensor".into()],
        ..MockClient::default()
    };
    let annotator = Annotator::with_clock(&mock, config(1), manual());
    let err = annotator
        .annotate(
            &sentence(1, "A sensor reads data."),
            &spec,
            &AnnotationCache::in_memory(),
        )
        .unwrap_err();
    match err {
        AnnotateError::Unparseable { sent_id, raw } => {
            assert_eq!(sent_id, "D001/abstract/0000");
            assert_eq!(raw.len(), 2);
            assert!(raw[0].contains("not sure"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.calls(), 2);
}

#[test]
fn reask_recovers() {
    let spec = default_framework();
    let client = FnClient(|r: &ChatRequest<'_>| {
        let last = r.messages.messages().last().unwrap();
        if last.content == REASK {
            assert_eq!(r.messages.len(), 32);
            ok(&canonical_suffix(Label::ContextualPve))
        } else {
            ok("Hmm.")
        }
    });
    let annotator = Annotator::with_clock(client, config(1), manual());
    let a = annotator
        .annotate(
            &sentence(1, "Pollution harms people."),
            &spec,
            &AnnotationCache::in_memory(),
        )
        .unwrap();
    assert_eq!(a.label, Label::ContextualPve);
    assert_eq!(a.prompt_tokens, 20);
    assert_eq!(a.completion_tokens, 10);
}

#[test]
fn backoff_schedule_via_clock() {
    let spec = default_framework();
    let failures = AtomicUsize::new(0);
    let client = FnClient(|_: &ChatRequest<'_>| {
        if failures.fetch_add(1, Ordering::SeqCst) < 3 {
            Err(ClientError::Status {
                status: 503,
                body: "busy".into(),
            })
        } else {
            ok(&canonical_suffix(Label::NoPve))
        }
    });
    let clock = manual();
    let annotator = Annotator::with_clock(client, config(1), clock.clone());
    annotator
        .annotate(&sentence(1, "x"), &spec, &AnnotationCache::in_memory())
        .unwrap();
    let sleeps: Vec<f64> = clock.sleeps().iter().map(|d| d.as_secs_f64()).collect();
    assert_eq!(sleeps, [1.0, 2.0, 4.0]);
}

#[test]
fn retries_exhausted() {
    let spec = default_framework();
    let client = FnClient(|_: &ChatRequest<'_>| Err(ClientError::Transport("refused".into())));
    let mut cfg = config(1);
    cfg.retry.max_attempts = 3;
    let clock = manual();
    let annotator = Annotator::with_clock(client, cfg, clock.clone());
    let err = annotator
        .annotate(&sentence(7, "x"), &spec, &AnnotationCache::in_memory())
        .unwrap_err();
    assert!(matches!(
        err,
        AnnotateError::RetriableExhausted { ref sent_id, attempts: 3, .. } if sent_id == "D007/abstract/0000"
    ));
    assert_eq!(clock.sleeps().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let spec = default_framework();
    let client = FnClient(|_: &ChatRequest<'_>| {
        Err(ClientError::Status {
            status: 401,
            body: "bad key".into(),
        })
    });
    let clock = manual();
    let annotator = Annotator::with_clock(client, config(1), clock.clone());
    let err = annotator
        .annotate(&sentence(1, "x"), &spec, &AnnotationCache::in_memory())
        .unwrap_err();
    assert!(matches!(err, AnnotateError::Rejected { .. }));
    assert!(clock.sleeps().is_empty());
}

fn hundred() -> Vec<Sentence> {
    (0..100)
        .map(|i| {
            let text = if i % 2 == 0 {
                format!("Item {i} protects human safety.")
            } else {
                format!("Item {i} uses a bolt.")
            };
            sentence(i, &text)
        })
        .collect()
}

#[test]
fn batch_then_rerun_is_cached() {
    let spec = default_framework();
    let mock = MockClient::new(
        vec![MockRule {
            contains: "safety".into(),
            label: Label::DirectPve,
        }],
        Label::NoPve,
    );
    let annotator = Annotator::with_clock(&mock, config(8), manual());
    let cache = AnnotationCache::in_memory();
    let sentences = hundred();
    let first = annotator.annotate_batch(&sentences, &spec, &cache);
    assert_eq!(
        first.summary,
        BatchSummary {
            done: 100,
            cached: 0,
            failed: 0
        }
    );
    assert!(first
        .annotations
        .windows(2)
        .all(|w| w[0].sent_id < w[1].sent_id));
    assert_eq!(first.annotations[0].label, Label::DirectPve);
    assert_eq!(first.annotations[1].label, Label::NoPve);
    assert_eq!(mock.calls(), 100);

    let second = annotator.annotate_batch(&sentences, &spec, &cache);
    assert_eq!(
        second.summary,
        BatchSummary {
            done: 0,
            cached: 100,
            failed: 0
        }
    );
    assert_eq!(second.annotations, first.annotations);
    assert_eq!(mock.calls(), 100);
}

#[test]
fn batch_isolates_failures() {
    let spec = default_framework();
    let mock = MockClient {
        fail: vec!["Item 5 ".into(), "Item 50 ".into(), "Item 97 ".into()],
        ..MockClient::default()
    };
    let mut cfg = config(4);
    cfg.retry.max_attempts = 2;
    let annotator = Annotator::with_clock(&mock, cfg, manual());
    let out = annotator.annotate_batch(&hundred(), &spec, &AnnotationCache::in_memory());
    assert_eq!(
        out.summary,
        BatchSummary {
            done: 97,
            cached: 0,
            failed: 3
        }
    );
    let ids: Vec<&str> = out.failures.iter().map(|f| f.sent_id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "D005/abstract/0000",
            "D050/abstract/0000",
            "D097/abstract/0000"
        ]
    );
    assert!(out.failures[0].reason.contains("gave up after 2 attempts"));
}

#[test]
fn batch_bounds_in_flight_requests() {
    let spec = default_framework();
    let current = AtomicUsize::new(0);
    let peak = AtomicUsize::new(0);
    let client = FnClient(|_: &ChatRequest<'_>| {
        let now = current.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(2));
        current.fetch_sub(1, Ordering::SeqCst);
        ok(&canonical_suffix(Label::NoPve))
    });
    let annotator = Annotator::with_clock(client, config(3), manual());
    let out = annotator.annotate_batch(&hundred()[..30], &spec, &AnnotationCache::in_memory());
    assert_eq!(out.summary.done, 30);
    let peak = peak.load(Ordering::SeqCst);
    assert!((1..=3).contains(&peak), "peak {peak}");
}

#[test]
fn rate_limit_paces_requests() {
    let spec = default_framework();
    let mock = MockClient::default();
    let mut cfg = config(1);
    cfg.requests_per_minute = Some(60.0);
    let clock = manual();
    let annotator = Annotator::with_clock(&mock, cfg, clock.clone());
    annotator.annotate_batch(&hundred()[..5], &spec, &AnnotationCache::in_memory());
    let waited: f64 = clock.sleeps().iter().map(|d| d.as_secs_f64()).sum();
    assert!((waited - 4.0).abs() < 1e-9, "{waited}");
}

#[test]
fn file_cache_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.log.jsonl");
    let spec = default_framework();
    let mock = MockClient::default();
    let annotator = Annotator::with_clock(&mock, config(2), manual());
    {
        let cache = AnnotationCache::open(&path).unwrap();
        annotator.annotate_batch(&hundred()[..10], &spec, &cache);
    }
    let cache = AnnotationCache::open(&path).unwrap();
    assert_eq!(cache.len(), 10);
    let out = annotator.annotate_batch(&hundred()[..10], &spec, &cache);
    assert_eq!(out.summary.cached, 10);
    assert_eq!(mock.calls(), 10);
}

#[test]
fn config_validation() {
    assert!(GlmConfig::default().validate().is_empty());
    let bad = GlmConfig {
        max_concurrent: 0,
        temperature: 2.5,
        retry: RetryPolicy {
            max_attempts: 0,
            base_backoff_secs: 1.0,
        },
        ..GlmConfig::default()
    };
    assert_eq!(bad.validate().len(), 3);
}

/// Serves one canned HTTP response and returns the raw request.
fn one_shot_server(status: &str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/v1", listener.local_addr().unwrap());
    let status = status.to_string();
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut payload = vec![0; length];
        reader.read_exact(&mut payload).unwrap();
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        head + &String::from_utf8(payload).unwrap()
    });
    (addr, handle)
}

#[test]
fn http_client_speaks_chat_completions() {
    let (base, server) = one_shot_server(
        "200 OK",
        r#"{"choices":[{"message":{"role":"assistant","content":"Let's think step by step. Based on these considerations, I would categorize this sentence as: No PVE."}}],"usage":{"prompt_tokens":123,"completion_tokens":45}}"#,
    );
    let client = HttpClient::new(&base, "secret", Duration::from_secs(10));
    let messages = assemble_prompt(&default_framework(), "A bolt.");
    let c = client
        .complete(&ChatRequest {
            model: "gpt-4",
            messages: &messages,
            temperature: 0.0,
        })
        .unwrap();
    assert_eq!(c.prompt_tokens, 123);
    assert_eq!(c.completion_tokens, 45);
    assert_eq!(parse_response(&c.content).unwrap().0, Label::NoPve);
    let request = server.join().unwrap();
    assert!(request.starts_with("POST /v1/chat/completions"));
    assert!(request
        .to_ascii_lowercase()
        .contains("authorization: bearer secret"));
    let body: serde_json::Value =
        serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"].as_array().unwrap().len(), 30);
}

#[test]
fn http_status_errors_classified() {
    let (base, server) = one_shot_server("429 Too Many Requests", r#"{"error":"slow down"}"#);
    let client = HttpClient::new(&base, "k", Duration::from_secs(10));
    let messages = assemble_prompt(&default_framework(), "x");
    let err = client
        .complete(&ChatRequest {
            model: "m",
            messages: &messages,
            temperature: 0.0,
        })
        .unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, ClientError::Status { status: 429, .. }));
    assert!(err.is_retriable());
}

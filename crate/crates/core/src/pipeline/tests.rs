use super::*;
use crate::annotator::MockClient;
use std::sync::atomic::{AtomicUsize, Ordering};

const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../demo");

/// Copies the demo inputs into a fresh directory and returns the config path.
fn demo_copy(dir: &Path) -> PathBuf {
    for f in [
        "config.json",
        "documents.jsonl",
        "lexicon.csv",
        "mock_glm.json",
    ] {
        std::fs::copy(Path::new(DEMO).join(f), dir.join(f)).unwrap();
    }
    dir.join("config.json")
}

fn edit_config(path: &Path, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn shipped_demo_config_is_valid() {
    validate_config(&Path::new(DEMO).join("config.json")).unwrap();
}

#[test]
fn missing_tier_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_copy(dir.path());
    edit_config(&cfg, |v| {
        v["sample"]["rates"].as_object_mut().unwrap().remove("3");
    });
    match validate_config(&cfg) {
        Err(ConfigError::Invalid(errs)) => {
            assert_eq!(errs.len(), 1, "{errs:?}");
            assert!(errs[0].contains("tier 3"), "{errs:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn errors_are_aggregated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_copy(dir.path());
    edit_config(&cfg, |v| {
        v["paths"]["corpus"] = json!("absent.jsonl");
        v["split_ratio"] = json!(1.5);
    });
    match validate_config(&cfg) {
        Err(ConfigError::Invalid(errs)) => {
            assert_eq!(errs.len(), 2, "{errs:?}");
            assert!(errs[0].contains("absent.jsonl"));
            assert!(errs[1].contains("split_ratio"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn annotate_before_sample_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&demo_copy(dir.path())).unwrap();
    let err = run_pipeline(&cfg, &[Stage::Annotate], &RunOptions::default()).unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::MissingUpstream {
                stage: Stage::Annotate,
                run_first: Stage::Sample,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn stage_names_round_trip() {
    for s in Stage::ALL {
        assert_eq!(s.name().parse::<Stage>(), Ok(s));
    }
    assert!("bogus".parse::<Stage>().is_err());
}

#[test]
fn full_run_then_skip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&demo_copy(dir.path())).unwrap();
    let fixture = std::fs::read_to_string(dir.path().join("mock_glm.json")).unwrap();
    let mock = Arc::new(MockClient::from_json(&fixture).unwrap());
    let options = RunOptions {
        client: Some(mock.clone()),
        ..RunOptions::default()
    };
    let first = run_pipeline(&cfg, &Stage::ALL, &options).unwrap();
    assert!(first.iter().all(|s| s.status == StageStatus::Ran));
    let calls = mock.calls();
    assert!(calls > 0);
    let second = run_pipeline(&cfg, &Stage::ALL, &options).unwrap();
    assert!(second.iter().all(|s| s.status == StageStatus::Skipped));
    assert_eq!(mock.calls(), calls);
    assert_eq!(
        first.iter().map(|s| &s.summary).collect::<Vec<_>>(),
        second.iter().map(|s| &s.summary).collect::<Vec<_>>()
    );

    // Editing an upstream input invalidates downstream manifests.
    edit_config(&dir.path().join("config.json"), |v| {
        v["seeds"]["train"] = json!(99)
    });
    let cfg = RunConfig::load(&dir.path().join("config.json")).unwrap();
    let third = run_pipeline(&cfg, &Stage::ALL, &options).unwrap();
    let ran: Vec<Stage> = third
        .iter()
        .filter(|s| s.status == StageStatus::Ran)
        .map(|s| s.stage)
        .collect();
    assert_eq!(ran, [Stage::Train, Stage::Eval, Stage::Predict]);
}

#[test]
fn injected_failures_are_listed_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&demo_copy(dir.path())).unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let client = crate::annotator::FnClient(move |r: &crate::annotator::ChatRequest<'_>| {
        counter.fetch_add(1, Ordering::SeqCst);
        Err(crate::annotator::ClientError::Status {
            status: 400,
            body: format!("rejected {}", r.model),
        })
    });
    let options = RunOptions {
        client: Some(Arc::new(client)),
        ..RunOptions::default()
    };
    let out = run_pipeline(
        &cfg,
        &[Stage::Ingest, Stage::Filter, Stage::Sample, Stage::Annotate],
        &options,
    )
    .unwrap();
    let annotate = &out[3].summary;
    assert_eq!(annotate["done"], 0);
    assert_eq!(
        annotate["failed"].as_u64().unwrap() as usize,
        calls.load(Ordering::SeqCst)
    );
    let failures: Vec<Value> = jsonl::read_all(&cfg.workdir().join(ANNOTATION_FAILURES)).unwrap();
    assert_eq!(failures.len(), calls.load(Ordering::SeqCst));
}

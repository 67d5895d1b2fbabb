use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use tower::ServiceExt;
use valuelens::annotator::Annotation;
use valuelens::review::ReviewStore;
use valuelens::Label;
use valuelens_review::{router, AppState};

const TOKEN: &str = "s3cret";

fn annotation(i: usize, label: Label) -> (Annotation, String) {
    (
        Annotation {
            sent_id: format!("US{i:04}/abstract/0000"),
            label,
            rationale: format!("Let's think step by step. Reason {i}."),
            model: "mock".into(),
            prompt_tokens: 1,
            completion_tokens: 1,
            prompt_hash: format!("h{i}"),
            ts: "1970-01-01T00:00:00Z".into(),
        },
        format!("Sentence {i}."),
    )
}

/// 50 items: GLM says D_PVE for even ids, NO_PVE for odd ones.
fn app(n: usize) -> (axum::Router, String) {
    let items = (0..n)
        .map(|i| {
            annotation(
                i,
                if i % 2 == 0 {
                    Label::DirectPve
                } else {
                    Label::NoPve
                },
            )
        })
        .collect();
    let mut store = ReviewStore::new(items).unwrap();
    let batch = store.enqueue_sample(n, 1).unwrap();
    (router(AppState::new(store, TOKEN)), batch)
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder()
        .method(method)
        .uri(uri)
        .header("authorization", format!("Bearer {TOKEN}"));
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn judgment(annotator: &str, sent_id: &str, label: &str) -> Value {
    json!({"annotator_id": annotator, "sent_id": sent_id, "label": label})
}

#[tokio::test]
async fn rejects_missing_token() {
    let (app, batch) = app(3);
    let req = Request::get(format!("/api/v1/batches/{batch}/progress"))
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn review_flow() {
    let (app, batch) = app(3);
    let next = format!("/api/v1/batches/{batch}/next?annotator=ann");
    let (status, item) = call(&app, "GET", &next, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["sent_id"], "US0000/abstract/0000");
    assert_eq!(item["glm_label"], "D_PVE");
    assert!(item["glm_rationale"]
        .as_str()
        .unwrap()
        .starts_with("Let's think"));

    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/judgments",
        Some(judgment("ann", "US0000/abstract/0000", "D-PVE")),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, body) = call(
        &app,
        "POST",
        "/api/v1/judgments",
        Some(judgment("ann", "US0000/abstract/0000", "No PVE")),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already judged"));
    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/judgments",
        Some(judgment("ann", "US9999/abstract/0000", "No PVE")),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/judgments",
        Some(judgment("ann", "US0001/abstract/0000", "perhaps")),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/judgments",
        Some(json!({"annotator_id": "ann"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, item) = call(&app, "GET", &next, None).await;
    assert_eq!(item["sent_id"], "US0001/abstract/0000");
    for id in ["US0001/abstract/0000", "US0002/abstract/0000"] {
        call(
            &app,
            "POST",
            "/api/v1/judgments",
            Some(judgment("ann", id, "NO_PVE")),
        )
        .await;
    }
    let (status, body) = call(&app, "GET", &next, None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(body, Value::Null);

    let (_, progress) = call(
        &app,
        "GET",
        &format!("/api/v1/batches/{batch}/progress"),
        None,
    )
    .await;
    assert_eq!(progress, json!({"total": 3, "judged_by": {"ann": 3}}));

    let (status, item) = call(&app, "GET", "/api/v1/items/US0002/abstract/0000", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["text"], "Sentence 2.");
    let (status, _) = call(&app, "GET", "/api/v1/batches/nope/stats", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stats_mirror_thirty_nine_of_fifty() {
    let (app, batch) = app(50);
    // Agree with the GLM on the first 39 items, disagree on the last 11.
    let mut labels = BTreeMap::new();
    for i in 0..50 {
        let glm_is_d = i % 2 == 0;
        let agree = i < 39;
        let label = if glm_is_d == agree { "D_PVE" } else { "NO_PVE" };
        let id = format!("US{i:04}/abstract/0000");
        labels.insert(id.clone(), label);
        let (status, _) = call(
            &app,
            "POST",
            "/api/v1/judgments",
            Some(judgment("ann1", &id, label)),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (status, stats) = call(&app, "GET", &format!("/api/v1/batches/{batch}/stats"), None).await;
    assert_eq!(status, StatusCode::OK);
    let vs = &stats["vs_glm"][0];
    assert_eq!(vs["a"], "ann1");
    assert_eq!(vs["b"], "glm");
    assert_eq!(vs["n_compared"], 50);
    assert_eq!(vs["percent_agreement"], 78.0);
    assert_eq!(stats["pairwise"], json!([]));
}

#[tokio::test]
async fn concurrent_duplicates_first_write_wins() {
    let (app, _) = app(2);
    let mut handles = Vec::new();
    for k in 0..8 {
        let app = app.clone();
        let label = if k % 2 == 0 { "D_PVE" } else { "NO_PVE" };
        handles.push(tokio::spawn(async move {
            call(
                &app,
                "POST",
                "/api/v1/judgments",
                Some(judgment("ann", "US0000/abstract/0000", label)),
            )
            .await
        }));
    }
    let mut created = 0;
    for h in handles {
        let (status, _) = h.await.unwrap();
        match status {
            StatusCode::CREATED => created += 1,
            StatusCode::CONFLICT => {}
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!(created, 1);
}

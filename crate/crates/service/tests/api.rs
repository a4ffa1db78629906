use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ckdctx_core::config::PipelineConfig;
use ckdctx_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_config(dir: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.n_patients = 800;
    cfg.model.epochs = 8;
    cfg.model.hidden = vec![16];
    cfg.model.learning_rates = vec![1e-2];
    cfg.explain.k = 5;
    cfg.explain.n_samples = 200;
    cfg.service.data_dir = dir.to_path_buf();
    cfg
}

async fn raw(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => Body::from(serde_json::to_vec(&v).unwrap()),
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.header("content-type", "application/json").body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = raw(app, method, uri, body, None).await;
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

/// Submits a job and blocks until it finishes.
async fn run_job(app: &Router, state: &AppState, uri: &str, body: Value) -> Value {
    let (status, rec) = call(app, "POST", uri, Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{rec}");
    assert_eq!(rec["state"], "queued");
    let id = rec["job_id"].as_str().unwrap().to_string();
    let done = state.jobs().wait(&id).unwrap();
    let (status, v) = call(app, "GET", &format!("/v1/jobs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["state"], serde_json::to_value(done.state).unwrap());
    v
}

#[tokio::test]
async fn request_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let state = AppState::new(small_config(tmp.path())).unwrap();
    let app = router(state);

    let (s, v) = call(&app, "GET", "/v1/jobs/unknown", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");

    let (s, v) = call(&app, "POST", "/v1/models/train", Some(json!({"kind": "SVM"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["path"], "kind");
    assert!(v["message"].as_str().unwrap().contains("SVM"));

    let (s, v) = call(&app, "POST", "/v1/models/train", Some(json!({"kind": "LR", "epochs": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    let (s, v) = call(&app, "POST", "/v1/qa/ask", Some(json!({"question": ""}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "empty_query");
    assert_eq!(v["path"], "question");

    let (s, v) = call(&app, "POST", "/v1/context/answer", Some(json!({"kind": "Q9"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["path"], "kind");

    let (s, v) = call(&app, "GET", "/v1/patients/P1/explanation", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["message"].as_str().unwrap().contains("model"), "{v}");
    assert_eq!(v["job"], "train");

    let (s, v) = call(&app, "POST", "/v1/qa/ask", Some(json!({"question": "insulin"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["job"], "ingest-guidelines");

    let (s, v) = call(&app, "GET", "/v1/prototypes?k=abc", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    let (s, _) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "GET", "/v1/spec", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["openapi"], "3.0.3");
    assert!(v["paths"]["/v1/models/train"]["post"].is_object());
    assert!(v["components"]["schemas"]["TrainRequest"].is_object());
}

#[tokio::test]
async fn failed_job_reports_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let state = AppState::new(small_config(tmp.path())).unwrap();
    let app = router(state.clone());
    let v = run_job(&app, &state, "/v1/cohort/build", json!({})).await;
    assert_eq!(v["state"], "failed");
    assert_eq!(v["error"]["code"], "missing_artifact");
    assert_eq!(v["error"]["job"], "generate-data");
}

#[tokio::test]
async fn concurrent_train_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let state = AppState::paused(small_config(tmp.path())).unwrap();
    let app = router(state.clone());
    let (s, first) = call(&app, "POST", "/v1/models/train", Some(json!({"kind": "LR"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, v) = call(&app, "POST", "/v1/models/train", Some(json!({"kind": "MLP"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "conflict");
    state.jobs().resume();
    let done = state.jobs().wait(first["job_id"].as_str().unwrap()).unwrap();
    assert_eq!(serde_json::to_value(done.state).unwrap(), "failed");
    let (s, _) = call(&app, "POST", "/v1/models/train", Some(json!({"kind": "MLP"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn bearer_token_and_ui() {
    let tmp = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>ui</html>").unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.service.bearer_token = Some("s3cret".into());
    cfg.service.ui_dir = Some(ui.path().to_path_buf());
    let app = router(AppState::new(cfg).unwrap());
    let (s, _) = raw(&app, "GET", "/v1/jobs", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = raw(&app, "GET", "/v1/jobs", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, body) = raw(&app, "GET", "/v1/jobs", None, Some("s3cret")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"[]");
    let (s, body) = raw(&app, "GET", "/ui/index.html", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
}

#[tokio::test]
async fn full_pipeline_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let state = AppState::new(small_config(tmp.path())).unwrap();
    let app = router(state.clone());

    for (uri, body) in [
        ("/v1/data/generate", json!({})),
        ("/v1/cohort/build", json!({})),
        ("/v1/models/train", json!({"kind": "LR"})),
        ("/v1/models/train", json!({"kind": "MLP"})),
        ("/v1/explanations/build", json!({})),
        ("/v1/guidelines/ingest", json!({})),
    ] {
        let v = run_job(&app, &state, uri, body).await;
        assert_eq!(v["state"], "done", "{uri}: {v}");
        assert!(v["result"]["snapshot"].is_string());
    }

    let (s, m) = call(&app, "GET", "/v1/models/mlp/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    for key in ["precision", "recall", "auc_roc", "auc_prc", "brier"] {
        assert!(m[key].is_number(), "{key}");
    }
    let (s, _) = call(&app, "GET", "/v1/models/svm/metrics", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, p) = call(&app, "GET", "/v1/prototypes?k=3", None).await;
    assert_eq!(s, StatusCode::OK);
    let pool = p["pool_size"].as_u64().unwrap() as usize;
    assert_eq!(p["prototypes"].as_array().unwrap().len(), 3.min(pool));
    let (_, p) = call(&app, "GET", "/v1/prototypes", None).await;
    let protos = p["prototypes"].as_array().unwrap();
    assert_eq!(protos.len(), 5.min(pool));
    let pid = protos[0]["patient_id"].as_str().unwrap().to_string();

    let (s, summary) = call(&app, "GET", "/v1/prototypes/summary", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(summary["n"], protos.len());

    let (s, r) = call(&app, "GET", &format!("/v1/patients/{pid}/risk"), None).await;
    assert_eq!(s, StatusCode::OK);
    let risk = r["risk"].as_f64().unwrap();
    assert_eq!(risk, protos[0]["risk"].as_f64().unwrap());

    let (s, e) = call(&app, "GET", &format!("/v1/patients/{pid}/explanation"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(e["patient_id"], pid.as_str());
    let (s, _) = call(&app, "GET", "/v1/patients/nobody/risk", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, a) = call(&app, "GET", "/v1/explanations/aggregate?top=4", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(a["items"].as_array().unwrap().len() <= 4);

    let (s, q) = call(
        &app,
        "POST",
        "/v1/qa/ask",
        Some(json!({"question": "What should be done if A1C levels are greater than 10?"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let top = &q["answers"][0];
    assert!(top["answer_text"].as_str().unwrap().contains("early introduction of insulin"));
    assert!(top["numeric_bonus"].as_f64().unwrap() > 0.0);

    let (s, b) = call(&app, "POST", "/v1/context/answer", Some(json!({"kind": "Q4", "patient_id": pid}))).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let text = b["parts"].as_array().unwrap().last().unwrap()["payload"]["text"].as_str().unwrap().to_string();
    assert!(text.contains(&format!("{risk:.2}")), "{text}");
    let (s, _) = call(&app, "POST", "/v1/context/answer", Some(json!({"kind": "Q2"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, b) = call(
        &app,
        "POST",
        "/v1/context/answer",
        Some(json!({"kind": "FreeText", "question": "What is typically done for patients not meeting treatment goals?"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!(b["parts"][0]["payload"]["answer_text"].as_str().unwrap().contains("should not be delayed"));

    for uri in ["/v1/prototypes?k=5", "/v1/prototypes/summary", "/v1/explanations/aggregate", "/v1/snapshot"] {
        let (_, a) = raw(&app, "GET", uri, None, None).await;
        let (_, b) = raw(&app, "GET", uri, None, None).await;
        assert_eq!(a, b, "{uri}");
    }
    let (_, a) = raw(&app, "GET", &format!("/v1/patients/{pid}/explanation"), None, None).await;
    let (_, b) = raw(&app, "GET", &format!("/v1/patients/{pid}/explanation"), None, None).await;
    assert_eq!(a, b);

    for uri in ["/v1/cohort".to_string(), format!("/v1/patients/{pid}/explanation"), "/v1/prototypes".into()] {
        let (_, body) = raw(&app, "GET", &uri, None, None).await;
        assert!(!String::from_utf8_lossy(&body).contains("\"visits\":"), "{uri}");
    }
}

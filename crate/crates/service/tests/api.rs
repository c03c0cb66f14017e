use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use bvmdesign_service::{router, AppState};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::time::Instant;
use tower::ServiceExt;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn app() -> Router {
    router(AppState::new(configs()))
}

fn design(name: &str) -> Value {
    let text = std::fs::read_to_string(configs().join("survival").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn survival_refs() -> Value {
    json!({ "model": "survival/model.json", "ensemble": "survival/ensemble.json" })
}

async fn session(app: &Router) -> String {
    let (status, meta) = call(app, "POST", "/sessions", Some(survival_refs())).await;
    assert_eq!(status, StatusCode::CREATED, "{meta}");
    meta["id"].as_str().unwrap().to_string()
}

fn cost() -> Value {
    json!({ "c0": 1000.0, "c1": 10.0, "c2": 1.0 })
}

#[tokio::test]
async fn health_and_session_lifecycle() {
    let app = app();
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");

    let (status, meta) = call(&app, "POST", "/sessions", Some(survival_refs())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(meta["model"], "piecewise-exp-survival");
    assert_eq!(meta["plan"]["prior_draws"], 10_000);
    assert_eq!(meta["plan"]["mvn_draws"], 20_000);
    assert_eq!(meta["ensemble"]["n_train"], 60);
    let id = meta["id"].as_str().unwrap();

    let (status, got) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got, meta);

    // Identical POST gives an independent session.
    let other = session(&app).await;
    assert_ne!(other, id);

    let (status, _) = call(&app, "GET", "/sessions/00000000-0000-0000-0000-000000000000", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/sessions/not-a-uuid", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_session_requests_are_400() {
    let app = app();
    let (status, body) =
        call(&app, "POST", "/sessions", Some(json!({ "model": "survival/model.json" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("ensemble"));

    let refs = json!({ "model": "survival/model.json", "ensemble": "survival/missing.json" });
    let (status, body) = call(&app, "POST", "/sessions", Some(refs)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("missing.json"));

    // Logistic spec with a survival ensemble: predictor names disagree.
    let refs = json!({ "model": "logistic/model.json", "ensemble": "survival/ensemble.json" });
    let (status, _) = call(&app, "POST", "/sessions", Some(refs)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, "POST", "/sessions/00000000-0000-0000-0000-000000000000/evaluate", Some(json!({"design": design("d1.json")}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn inline_artifacts_are_accepted() {
    let app = app();
    let model: Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("survival/model.json")).unwrap()).unwrap();
    let ensemble: Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("survival/ensemble.json")).unwrap())
            .unwrap();
    let (status, inline) =
        call(&app, "POST", "/sessions", Some(json!({ "model": model, "ensemble": ensemble }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let by_path = session(&app).await;

    let body = json!({ "design": design("d1.json"), "cost": cost() });
    let (_, a) = call(&app, "POST", &format!("/sessions/{}/evaluate", inline["id"].as_str().unwrap()), Some(body.clone())).await;
    let (_, b) = call(&app, "POST", &format!("/sessions/{by_path}/evaluate"), Some(body)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn evaluate_is_fast_deterministic_and_reproducible() {
    let app = app();
    let id = session(&app).await;
    let body = json!({ "design": design("d1.json"), "cost": cost(), "uncertainty": true });
    let uri = format!("/sessions/{id}/evaluate");

    let start = Instant::now();
    let (status, first) = call(&app, "POST", &uri, Some(body.clone())).await;
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(status, StatusCode::OK, "{first}");
    assert!(elapsed < 2.0, "evaluate took {elapsed:.2}s");

    let (_, second) = call(&app, "POST", &uri, Some(body.clone())).await;
    assert_eq!(first, second);

    // A fresh server loading the same artifacts answers identically.
    let fresh = self::app();
    let again = session(&fresh).await;
    let (_, third) = call(&fresh, "POST", &format!("/sessions/{again}/evaluate"), Some(body)).await;
    assert_eq!(first, third);

    let analyses = first["analyses"].as_array().unwrap();
    assert_eq!(analyses.len(), 3);
    for a in analyses {
        assert!(a["se_efficacy_cumulative"].as_f64().unwrap() > 0.0);
        assert!(a["interval_efficacy_cumulative"].is_object());
    }
    for c in first["reference_checks"].as_array().unwrap() {
        if c["quantity"] == "efficacy_cumulative" {
            assert_eq!(c["within_tolerance"], true, "{c}");
        }
    }
}

#[tokio::test]
async fn d2_costs_less_than_d1() {
    let app = app();
    let id = session(&app).await;
    let uri = format!("/sessions/{id}/evaluate");
    let mut iec = Vec::new();
    for name in ["d1.json", "d2.json"] {
        let (status, r) = call(&app, "POST", &uri, Some(json!({ "design": design(name), "cost": cost() }))).await;
        assert_eq!(status, StatusCode::OK);
        iec.push(r["iec"]["total"].as_f64().unwrap());
    }
    assert!(iec[1] < iec[0], "IEC D1 {} D2 {}", iec[0], iec[1]);
}

#[tokio::test]
async fn invalid_designs_get_field_errors() {
    let app = app();
    let id = session(&app).await;
    let uri = format!("/sessions/{id}/evaluate");

    let bad = json!({ "design": { "schedule": [500, 400], "efficacy": [0.99, 0.975] } });
    let (status, body) = call(&app, "POST", &uri, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&str> = body["errors"].as_array().unwrap().iter().map(|e| e["field"].as_str().unwrap()).collect();
    assert_eq!(fields, ["design.schedule[1]"]);

    let bad = json!({ "design": { "schedule": [500], "efficacy": [1.5] } });
    let (status, body) = call(&app, "POST", &uri, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["errors"][0]["field"], "design.efficacy[0]");

    let bad = json!({ "design": design("d1.json"), "cost": { "c0": -1.0, "c1": 10.0, "c2": 1.0 } });
    let (status, body) = call(&app, "POST", &uri, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["errors"][0]["field"], "cost.c0");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "design": { "schedule": "x" } }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["errors"][0]["field"], "design");
}

#[tokio::test]
async fn curves() {
    let app = app();
    let id = session(&app).await;
    let uri = format!("/sessions/{id}/curve");

    let body = json!({ "design": design("d1.json"), "grid": [0.0, 0.2, 0.4] });
    let (status, c) = call(&app, "POST", &uri, Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{c}");
    let points = c["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for p in points {
        assert_eq!(p["efficacy_cumulative"].as_array().unwrap().len(), 3);
    }
    // Non-decreasing in psi up to the reported SEs.
    for t in 0..3 {
        for w in points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let slack = 3.0 * (a["se"][t].as_f64().unwrap() + b["se"][t].as_f64().unwrap());
            assert!(b["efficacy_cumulative"][t].as_f64().unwrap() + slack >= a["efficacy_cumulative"][t].as_f64().unwrap());
        }
    }

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "design": design("d1.json"), "grid": [] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["errors"][0]["field"], "grid");
}

#[tokio::test]
async fn cors_allows_only_local_origins() {
    let app = app();
    let req = |origin: &str| {
        Request::builder()
            .uri("/healthz")
            .header(header::ORIGIN, origin)
            .body(Body::empty())
            .unwrap()
    };
    let local = app.clone().oneshot(req("http://localhost:5173")).await.unwrap();
    assert_eq!(local.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
    let remote = app.oneshot(req("http://example.com")).await.unwrap();
    assert!(remote.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

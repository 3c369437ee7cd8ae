use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use irplan_cli::config::{synthetic_for, AppConfig, BackendKind, LlmWiring};
use irplan_cli::service::{router, AppState, ServiceConfig};
use irplan_core::model::build_synthetic;
use irplan_core::retrieval::KnowledgeBase;
use irplan_core::{plan, Incident, PlanResult, PlannerConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn incident() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("ctu_cryptodefence.json")).unwrap()).unwrap()
}

fn state(snapshot_dir: Option<&Path>) -> Arc<AppState> {
    AppState::new(ServiceConfig {
        app: AppConfig::default(),
        backend: BackendKind::Synthetic,
        llm: LlmWiring::default(),
        kb: KnowledgeBase::load(&fixture("kb.json")).unwrap(),
        snapshot_dir: snapshot_dir.map(Path::to_path_buf),
    })
    .unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, config: Value) -> Value {
    let (status, body) = call(
        app,
        "POST",
        "/api/v1/sessions",
        Some(json!({"incident": incident(), "config": config}).to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body
}

fn config(seed: u64) -> Value {
    serde_json::to_value(PlannerConfig {
        seed,
        n_candidates: 3,
        ..Default::default()
    })
    .unwrap()
}

/// Accepts the top-ranked candidate until the session stops.
async fn drive(app: &Router, id: &str) -> Value {
    let mut session = call(app, "GET", &format!("/api/v1/sessions/{id}"), None).await.1;
    while session["status"] == "awaiting_decision" {
        let (status, next) = call(
            app,
            "POST",
            &format!("/api/v1/sessions/{id}/step"),
            Some(json!({"candidate_index": 0}).to_string()),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{next}");
        session = next;
    }
    session
}

#[tokio::test]
async fn created_session_has_ranked_candidates_and_enrichment() {
    let app = router(state(None));
    let session = create(&app, config(1)).await;
    assert_eq!(session["status"], "awaiting_decision");
    let qs: Vec<f64> = session["pending_candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["q_estimate"].as_f64().unwrap())
        .collect();
    assert_eq!(qs.len(), 3);
    assert!(qs.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(session["incident"]["enrichment"].as_array().unwrap().len(), 2);

    let (status, list) = call(&app, "GET", "/api/v1/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["id"], session["id"]);
}

#[tokio::test]
async fn accepting_top_candidates_matches_batch_plan() {
    let app = router(state(None));
    let session = create(&app, config(5)).await;
    let id = session["id"].as_str().unwrap().to_string();
    let done = drive(&app, &id).await;
    assert_eq!(done["status"], "terminal");

    let (status, exported) = call(&app, "GET", &format!("/api/v1/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let exported: PlanResult = serde_json::from_value(exported).unwrap();

    let incident: Incident = serde_json::from_value(session["incident"].clone()).unwrap();
    let model = build_synthetic(&synthetic_for(&AppConfig::default().synthetic, &incident)).unwrap();
    let batch = plan(&model, &incident, serde_json::from_value(config(5)).unwrap()).unwrap();
    assert_eq!(exported, batch);

    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/v1/sessions/{id}/step"),
        Some(json!({"candidate_index": 0}).to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn bad_requests_map_to_client_errors() {
    let app = router(state(None));
    let (status, _) = call(&app, "POST", "/api/v1/sessions", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/sessions",
        Some(json!({"incident": {"id": "", "system_description": "x", "logs": []}}).to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = call(&app, "GET", "/api/v1/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/v1/sessions/nope/step", Some(json!({"candidate_index": 0}).to_string())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = create(&app, config(2)).await["id"].as_str().unwrap().to_string();
    let step = format!("/api/v1/sessions/{id}/step");
    for bad in [json!({"candidate_index": 99}), json!({}), json!({"candidate_index": 0, "override_action_text": "x"})] {
        let (status, _) = call(&app, "POST", &step, Some(bad.to_string())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let (status, _) = call(&app, "POST", &step, Some(json!({"candidate": 0}).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn override_is_recorded_with_its_estimate() {
    let app = router(state(None));
    let id = create(&app, config(3)).await["id"].as_str().unwrap().to_string();
    let (status, session) = call(
        &app,
        "POST",
        &format!("/api/v1/sessions/{id}/step"),
        Some(json!({"override_action_text": "Call the vendor"}).to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{session}");
    let step = &session["steps"][0];
    assert_eq!(step["action"]["text"], "Call the vendor");
    assert_eq!(step["state_before"], step["state_after"]);
    assert!(step["q_estimate"].as_f64().unwrap() >= 1.0);
    assert!(step["selected_index"].is_null());
}

#[tokio::test]
async fn interleaved_sessions_do_not_interfere() {
    let app = router(state(None));
    let a = create(&app, config(7)).await["id"].as_str().unwrap().to_string();
    let b = create(&app, config(7)).await["id"].as_str().unwrap().to_string();
    let solo = router(state(None));
    let c = create(&solo, config(7)).await["id"].as_str().unwrap().to_string();

    // alternate a and b one step at a time
    loop {
        let mut moved = false;
        for id in [&a, &b] {
            let s = call(&app, "GET", &format!("/api/v1/sessions/{id}"), None).await.1;
            if s["status"] == "awaiting_decision" {
                call(&app, "POST", &format!("/api/v1/sessions/{id}/step"), Some(json!({"candidate_index": 0}).to_string())).await;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let steps = |v: Value| v["steps"].clone();
    let sa = steps(call(&app, "GET", &format!("/api/v1/sessions/{a}"), None).await.1);
    let sb = steps(call(&app, "GET", &format!("/api/v1/sessions/{b}"), None).await.1);
    let sc = steps(drive(&solo, &c).await);
    assert_eq!(sa, sb);
    assert_eq!(sa, sc);
}

#[tokio::test]
async fn concurrent_steps_on_one_session_apply_one_at_a_time() {
    let app = router(state(None));
    let id = create(&app, config(0)).await["id"].as_str().unwrap().to_string();
    let uri = format!("/api/v1/sessions/{id}/step");
    let body = json!({"candidate_index": 0}).to_string();
    let (r1, r2) = tokio::join!(
        call(&app, "POST", &uri, Some(body.clone())),
        call(&app, "POST", &uri, Some(body.clone()))
    );
    assert_eq!(r1.0, StatusCode::OK);
    assert_eq!(r2.0, StatusCode::OK);
    let lens = [r1.1["steps"].as_array().unwrap().len(), r2.1["steps"].as_array().unwrap().len()];
    assert!(lens.contains(&1) && lens.contains(&2), "{lens:?}");
}

#[tokio::test]
async fn snapshots_restore_sessions_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(Some(dir.path())));
    let id = create(&app, config(9)).await["id"].as_str().unwrap().to_string();
    let (_, stepped) = call(&app, "POST", &format!("/api/v1/sessions/{id}/step"), Some(json!({"candidate_index": 0}).to_string())).await;
    drop(app);

    let restarted = router(state(Some(dir.path())));
    let (status, restored) = call(&restarted, "GET", &format!("/api/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(restored, stepped);

    // the restored session keeps planning like the original would have
    let finished = drive(&restarted, &id).await;
    let fresh = router(state(None));
    let other = create(&fresh, config(9)).await["id"].as_str().unwrap().to_string();
    assert_eq!(finished["steps"], drive(&fresh, &other).await["steps"]);
}

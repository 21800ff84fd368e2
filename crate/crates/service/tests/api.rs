use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use strandforge::formats::{read_hair, read_vfld};
use strandforge::pipeline::{demo_sketch, Models};
use strandforge_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(v.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn as_json(b: &[u8]) -> Value {
    serde_json::from_slice(b).unwrap()
}

fn state() -> Arc<AppState> {
    AppState::open(ServiceConfig::default(), Models::default()).unwrap()
}

async fn new_session(st: &Arc<AppState>) -> String {
    let (code, body) = call(st, "POST", "/v1/sessions", Some(json!({"bust": "default", "backend": "diffusion"}))).await;
    assert_eq!(code, StatusCode::CREATED);
    as_json(&body)["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_and_sessions() {
    let st = state();
    assert_eq!(call(&st, "GET", "/healthz", None).await.0, StatusCode::OK);
    let a = new_session(&st).await;
    let b = new_session(&st).await;
    assert_ne!(a, b);
    let (code, _) = call(&st, "POST", "/v1/sessions", Some(json!({"bust": "nope"}))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(&st, "POST", "/v1/sessions", Some(json!({"backend": "magic"}))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&st, "GET", "/v1/sessions/missing/strands", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn full_loop() {
    let st = state();
    let id = new_session(&st).await;
    let sk = serde_json::to_value(demo_sketch(32)).unwrap();
    let (code, body) = call(&st, "POST", &format!("/v1/sessions/{id}/sketch"), Some(sk.clone())).await;
    assert_eq!(code, StatusCode::OK);
    let first = as_json(&body);
    let (_, body) = call(&st, "POST", &format!("/v1/sessions/{id}/sketch"), Some(sk)).await;
    assert_eq!(as_json(&body), first);

    let (code, body) = call(&st, "POST", &format!("/v1/sessions/{id}/synthesize"), None).await;
    assert_eq!(code, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let syn = as_json(&body);
    assert!(syn["strands"].as_u64().unwrap() >= 1000);

    let (code, body) = call(&st, "POST", &format!("/v1/sessions/{id}/view"), Some(json!({"x_deg": 0.0, "y_deg": 45.0, "z_deg": 0.0}))).await;
    assert_eq!(code, StatusCode::OK);
    assert!(as_json(&body)["valid_cells"].as_u64().unwrap() > 0);
    let (code, _) = call(&st, "POST", &format!("/v1/sessions/{id}/synthesize"), None).await;
    assert_eq!(code, StatusCode::OK);

    let (code, body) = call(&st, "POST", &format!("/v1/sessions/{id}/edits"), Some(json!({"kind": "cut", "stroke": [[2.0, 12.0], [30.0, 12.0]]}))).await;
    assert_eq!(code, StatusCode::OK, "{}", String::from_utf8_lossy(&body));

    let (code, hair) = call(&st, "GET", &format!("/v1/sessions/{id}/strands?format=hair"), None).await;
    assert_eq!(code, StatusCode::OK);
    let set = read_hair(&hair).unwrap();
    let (_, obj) = call(&st, "GET", &format!("/v1/sessions/{id}/strands?format=obj"), None).await;
    let lines = String::from_utf8(obj).unwrap().lines().filter(|l| l.starts_with("l ")).count();
    assert_eq!(lines, set.strands.iter().map(|s| s.len() - 1).sum::<usize>());
    assert_eq!(call(&st, "GET", &format!("/v1/sessions/{id}/strands?format=ply"), None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, vfld) = call(&st, "GET", &format!("/v1/sessions/{id}/field3d"), None).await;
    assert!(read_vfld(&vfld).unwrap().valid_count() > 0);
    assert_eq!(call(&st, "GET", &format!("/v1/sessions/{id}/field2d"), None).await.0, StatusCode::OK);

    let (_, info) = call(&st, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(as_json(&info)["history"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn validation_errors() {
    let st = state();
    let id = new_session(&st).await;
    let (code, _) = call(&st, "POST", &format!("/v1/sessions/{id}/synthesize"), None).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let mut sk = demo_sketch(32);
    sk.contour.pop();
    sk.contour.truncate(5);
    let (code, _) = call(&st, "POST", &format!("/v1/sessions/{id}/sketch"), Some(serde_json::to_value(sk).unwrap())).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn slow_requests_become_jobs() {
    let cfg = ServiceConfig { sync_timeout: Duration::ZERO, ..Default::default() };
    let st = AppState::open(cfg, Models::default()).unwrap();
    let id = new_session(&st).await;
    let sk = serde_json::to_value(demo_sketch(32)).unwrap();
    let (code, body) = call(&st, "POST", &format!("/v1/sessions/{id}/sketch"), Some(sk)).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let job = as_json(&body)["job"].as_str().unwrap().to_string();
    let mut done = None;
    for _ in 0..200 {
        let (code, body) = call(&st, "GET", &format!("/v1/jobs/{job}"), None).await;
        assert_eq!(code, StatusCode::OK);
        let v = as_json(&body);
        if v["status"] != "running" {
            done = Some(v);
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let v = done.expect("job finished");
    assert_eq!(v["outcome"]["status"], "done");
    assert!(v["outcome"]["result"]["valid"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { data_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let st = AppState::open(cfg.clone(), Models::default()).unwrap();
    let id = new_session(&st).await;
    call(&st, "POST", &format!("/v1/sessions/{id}/sketch"), Some(serde_json::to_value(demo_sketch(32)).unwrap())).await;
    let (_, body) = call(&st, "POST", &format!("/v1/sessions/{id}/synthesize"), None).await;
    let hash = as_json(&body)["hash"].clone();
    drop(st);
    let st = AppState::open(cfg, Models::default()).unwrap();
    let (code, info) = call(&st, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(as_json(&info)["strands"], hash);
}

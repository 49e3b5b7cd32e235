use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use breathlens::synth::{generate_record, RecordProfile};
use breathlens::xcm::{XcmConfig, XcmModel};
use breathlens_server::api::{router, AppState};
use breathlens_server::data::DataEntry;

fn state() -> Arc<AppState> {
    let data = (0..3)
        .map(|i| {
            let profile = RecordProfile {
                record_id: format!("rec{i:02}"),
                seed: 40 + i,
                ..RecordProfile::default()
            };
            let (record, annotations) = generate_record(&profile, 20.0).unwrap();
            DataEntry {
                record,
                annotations: (i != 2).then_some(annotations),
            }
        })
        .collect();
    let config = XcmConfig {
        filters_2d: 4,
        filters_1d: 4,
        filters_final: 8,
        ..XcmConfig::default()
    };
    let model = XcmModel::build(&config, 5).unwrap();
    Arc::new(AppState::new(model, data).unwrap())
}

async fn call(state: &Arc<AppState>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(state: &Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    call(state, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(state: &Arc<AppState>, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    call(state, req).await
}

fn window_body(d: usize, t: usize) -> String {
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|r| (0..t).map(|i| ((i + r) as f64 * 0.05).sin()).collect())
        .collect();
    serde_json::json!({ "window": rows }).to_string()
}

#[tokio::test]
async fn lists_record_ids() {
    let s = state();
    let (status, body) = get(&s, "/api/records").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::json!(["rec00", "rec01", "rec02"]));
}

#[tokio::test]
async fn record_samples_are_decimated() {
    let s = state();
    let (status, body) = get(&s, "/api/records/rec00?from_idx=100&to_idx=1100&max_points=50").await;
    assert_eq!(status, StatusCode::OK);
    let flow = body["flow"].as_array().unwrap();
    assert!(flow.len() <= 50 && flow.len() >= 25);
    assert!(flow.iter().all(|p| (100..1100).contains(&(p["idx"].as_u64().unwrap() as usize))));
    assert_eq!(body["len"], 2500);

    let (status, body) = get(&s, "/api/records/rec00").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["to_idx"], 2500);

    let (status, _) = get(&s, "/api/records/rec00?from_idx=10&to_idx=5").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&s, "/api/records/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn every_breath_has_an_explanation() {
    let s = state();
    for id in ["rec00", "rec01", "rec02"] {
        let (status, body) = get(&s, &format!("/api/records/{id}/breaths")).await;
        assert_eq!(status, StatusCode::OK);
        let breaths = body.as_array().unwrap();
        assert!(!breaths.is_empty());
        for b in breaths {
            let c = b["confidence"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&c));
            assert_eq!(b["annotated_label"].is_null(), id == "rec02");
            let bid = b["breath_id"].as_str().unwrap();
            let (status, e) = get(&s, &format!("/api/breaths/{bid}/explanation")).await;
            assert_eq!(status, StatusCode::OK, "{bid}");
            let combined = e["combined"].as_array().unwrap();
            assert_eq!(combined.len(), 625);
            assert!(combined.iter().all(|v| (0.0..=1.0).contains(&v.as_f64().unwrap())));
            assert_eq!(e["per_variable"].as_array().unwrap().len(), 2);
            let pad_left = e["pad_left"].as_u64().unwrap() as usize;
            let pad_right = e["pad_right"].as_u64().unwrap() as usize;
            for d in 0..2 {
                let row = e["window"][d].as_array().unwrap();
                assert_eq!(e["display_pad_value_left"][d], row[pad_left]);
                assert_eq!(e["display_pad_value_right"][d], row[624 - pad_right]);
            }
        }
    }
}

#[tokio::test]
async fn explanation_is_cached_and_stable() {
    let s = state();
    let (_, a) = get(&s, "/api/breaths/rec01:3/explanation").await;
    let (_, b) = get(&s, "/api/breaths/rec01:3/explanation").await;
    assert_eq!(a, b);
    let (status, _) = get(&s, "/api/breaths/rec01:9999/explanation").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&s, "/api/breaths/garbage/explanation").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn classify_accepts_two_by_t() {
    let s = state();
    let (status, body) = post(&s, "/api/classify", window_body(2, 625)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["combined"].as_array().unwrap().len(), 625);
    assert_eq!(body["label"], body["target_class"]);
}

#[tokio::test]
async fn classify_rejects_wrong_shapes() {
    let s = state();
    let (status, body) = post(&s, "/api/classify", window_body(3, 625)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("expected D=2"));

    let (status, body) = post(&s, "/api/classify", window_body(2, 600)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("T=625"));

    let (status, _) = post(&s, "/api/classify", "not json".into()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

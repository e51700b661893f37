use std::io::Cursor;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use splitgcn_core::data::parse_manifest;
use splitgcn_core::model::{Model, ModelConfig};
use splitgcn_service::{router, AppState, Engine, ServiceConfig};

fn app(max_sessions: usize) -> Router {
    let model = Model::<f32>::new(ModelConfig::tiny(), 7).unwrap();
    router(AppState::new(Engine::from_model(&model), ServiceConfig { max_sessions }))
}

fn png(w: u32, h: u32) -> Vec<u8> {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let inside = (20..60).contains(&x) && (15..50).contains(&y);
        if inside {
            image::Rgb([200, 40, 40])
        } else {
            image::Rgb([(x * 3) as u8, (y * 2) as u8, 90])
        }
    });
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
    out
}

async fn call(app: &Router, method: &str, uri: &str, body: Body) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

async fn create(app: &Router) -> String {
    let (s, v) = call(app, "POST", "/sessions", Body::from(png(80, 64))).await;
    assert_eq!(s, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn predict(app: &Router, id: &str) -> (StatusCode, Value) {
    let body = json!({"bbox": [20.0, 15.0, 40.0, 35.0], "class": "box"}).to_string();
    call(app, "POST", &format!("/sessions/{id}/predict"), Body::from(body)).await
}

#[tokio::test]
async fn create_returns_distinct_ids() {
    let app = app(8);
    let a = create(&app).await;
    let b = create(&app).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn truncated_png_is_bad_request() {
    let app = app(8);
    let mut bytes = png(80, 64);
    bytes.truncate(bytes.len() / 2);
    let (s, v) = call(&app, "POST", "/sessions", Body::from(bytes)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("PNG"));
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let app = app(8);
    let (s, _) = call(&app, "POST", "/sessions", Body::from(vec![0u8; 8 * 1024 * 1024 + 1])).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn predict_errors() {
    let app = app(8);
    let (s, _) = predict(&app, "nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let id = create(&app).await;
    let body = json!({"bbox": [50.0, 15.0, 40.0, 35.0]}).to_string();
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/predict"), Body::from(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn predict_is_structural_and_replay_safe() {
    let app = app(8);
    let id = create(&app).await;
    let (s, a) = predict(&app, &id).await;
    assert_eq!(s, StatusCode::OK);
    let comps = a["components"].as_array().unwrap();
    assert!(!comps.is_empty());
    assert!(comps.iter().all(|c| c.as_array().unwrap().len() >= 3));
    assert_eq!(a["vertex_coords"].as_array().unwrap().len(), 8);
    let (_, b) = predict(&app, &id).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn correct_contracts() {
    let app = app(8);
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/correct");
    let (s, _) = call(&app, "POST", &uri, Body::from(json!({"vertex_index": 0, "x": 30.0, "y": 30.0}).to_string())).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, pred) = predict(&app, &id).await;
    let (s, _) = call(&app, "POST", &uri, Body::from(json!({"vertex_index": 99, "x": 30.0, "y": 30.0}).to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let p = &pred["vertex_coords"][2];
    let same = json!({"vertex_index": 2, "x": p[0], "y": p[1]}).to_string();
    let (s, unchanged) = call(&app, "POST", &uri, Body::from(same)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(unchanged["components"], pred["components"]);
    assert_eq!(unchanged["moved_vertices"], json!([]));

    let t0 = Instant::now();
    let click = json!({"vertex_index": 3, "x": 33.25, "y": 21.5}).to_string();
    let (s, moved) = call(&app, "POST", &uri, Body::from(click)).await;
    assert!(t0.elapsed().as_millis() < 500);
    assert_eq!(s, StatusCode::OK);
    assert_eq!(moved["vertex_coords"][3], json!([33.25, 21.5]));
    assert!(moved["moved_vertices"].as_array().unwrap().contains(&json!(3)));
}

#[tokio::test]
async fn export_roundtrips_through_manifest() {
    let app = app(8);
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/export");
    let (s, _) = call(&app, "GET", &uri, Body::empty()).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, pred) = predict(&app, &id).await;
    let (s, rec) = call(&app, "GET", &uri, Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let parsed = parse_manifest(&rec.to_string()).unwrap();
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed[0].class, "box");
    assert_eq!(parsed[0].components.len(), pred["components"].as_array().unwrap().len());
    assert_eq!(json!(parsed[0].components), pred["components"]);
}

#[tokio::test]
async fn cors_headers_present() {
    let app = app(8);
    let req = Request::builder()
        .method("POST")
        .uri("/sessions")
        .header("origin", "http://localhost:5173")
        .body(Body::from(png(16, 16)))
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert!(res.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn least_recently_used_session_is_evicted() {
    let app = app(2);
    let a = create(&app).await;
    let b = create(&app).await;
    predict(&app, &a).await;
    let _c = create(&app).await;
    assert_eq!(predict(&app, &a).await.0, StatusCode::OK);
    assert_eq!(predict(&app, &b).await.0, StatusCode::NOT_FOUND);
}

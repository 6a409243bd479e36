#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use cuekit::api::{router, AppState};
use cuekit::demo::{demo_config, reference_song, DEMO_REPORT};
use cuekit::pipeline::Engine;
use cuekit_core::notation::write_midi;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn app(root: &Path) -> Router {
    router(AppState::new(Engine::new(demo_config(root)).unwrap()))
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>, if_match: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(tag) = if_match {
        req = req.header("if-match", tag);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

/// Creates the demo project over HTTP and runs it to the given stage.
pub async fn project_at(app: &Router, last: &str) -> String {
    let midi = base64::engine::general_purpose::STANDARD.encode(write_midi(&reference_song()).unwrap());
    let r = call(app, Method::POST, "/projects", Some(json!({"name": "demo", "reference_midi": midi})), None).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    let id = r.json()["id"].as_str().unwrap().to_string();
    let report: Value = serde_json::from_str(DEMO_REPORT).unwrap();
    let r = call(app, Method::PUT, &format!("/projects/{id}/description"), Some(json!({"report": report})), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    for action in ["generate", "assess", "arrange", "render"] {
        let r = call(app, Method::POST, &format!("/projects/{id}/{action}?wait=true"), None, None).await;
        assert_eq!(r.status, StatusCode::OK, "{action}: {}", String::from_utf8_lossy(&r.bytes));
        if action == last {
            break;
        }
    }
    id
}

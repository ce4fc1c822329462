use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fairscreen::service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path, n: usize) -> (Arc<AppState>, Router) {
    let mut config = ServiceConfig::new(dir);
    config.n = n;
    let state = AppState::new(config).unwrap();
    (state.clone(), router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn candidate(gender: &str, method: &str, beta: f64, inputs: &[&str]) -> Value {
    json!({
        "gender": gender,
        "ethnicity": "E1",
        "skills": [0.8, 0.6, 0.7, 0.9],
        "bias_level": beta,
        "inputs": inputs,
        "method": method,
    })
}

async fn score(app: &Router, body: Value) -> f64 {
    let (status, v) = call(app, "POST", "/api/score", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["score"].as_f64().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[tokio::test]
async fn human_scoring_is_plain_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 600);
    for inputs in [&[][..], &["gender", "embedding"][..]] {
        let g0 = score(&app, candidate("G0", "human", 0.0, inputs)).await;
        let g1 = score(&app, candidate("G1", "human", 0.0, inputs)).await;
        assert_eq!(g0, g1);
    }
    let adv = score(&app, candidate("G0", "human", 0.5, &[])).await;
    let dis = score(&app, candidate("G1", "human", 0.5, &[])).await;
    assert_eq!(dis, adv - 0.5 * 0.4);
    assert!((adv - dis - 0.2).abs() < 1e-15);
    // (0.8 + 0.6 + 0.7 + 0.9 + 8 * 0.5) / 12
    assert!((adv - 7.0 / 12.0).abs() < 1e-15);

    let (_, v) = call(&app, "POST", "/api/score", Some(candidate("G1", "human", 0.6, &[]))).await;
    assert_eq!(v["model_id"], Value::Null);
    assert_eq!(v["bias_level"], 0.6);
    assert_eq!(v["method"], "human");
    assert!(dir.path().read_dir().unwrap().next().is_none(), "human scoring wrote files");
}

#[tokio::test]
async fn bad_requests_get_field_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 600);

    let mut body = candidate("G0", "human", 0.5, &[]);
    body["skills"][1] = json!(1.4);
    let (status, v) = call(&app, "POST", "/api/score", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_request");
    assert_eq!(v["fields"][0]["field"], "skills[1]");

    let (status, v) = call(&app, "POST", "/api/score", Some(json!({"gender": "G0", "ethnicity": "E9"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"][0]["field"], "ethnicity");
    assert!(v["message"].as_str().unwrap().contains("E9"));

    let (status, v) = call(&app, "POST", "/api/score", Some(json!("not an object"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["message"].is_string());

    let (status, v) = call(&app, "POST", "/api/train", Some(json!({"scenario": "S2", "bias_level": 3.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"][0]["field"], "bias_level");

    let (status, _) = call(&app, "GET", "/api/screen?model_id=s2-b0.75-seed1&k=ten", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_models_and_routes_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 600);
    let (status, v) = call(&app, "GET", "/api/screen?model_id=s9-b0-seed1&k=10", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    assert!(v["message"].as_str().unwrap().contains("s9-b0-seed1"));
    let (status, v) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
}

#[tokio::test]
async fn train_list_screen_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 1200);

    let (status, meta) = call(&app, "GET", "/api/testbed/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(meta["n"], 1200);
    assert_eq!(meta["bias_grid"], json!([0.0, 0.25, 0.5, 0.75, 1.0]));
    assert_eq!(meta["leakage"], 1.0);

    let (status, v) = call(&app, "POST", "/api/train", Some(json!({"scenario": "S1", "bias_level": 0.5, "seed": 4}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["model_id"], "s1-b0.5-seed4");
    assert_eq!(v["history"].as_array().unwrap().len(), 10);
    assert!(v["val_mae"].as_f64().unwrap() < 0.2);

    let (_, list) = call(&app, "GET", "/api/models", None).await;
    let models = list["models"].as_array().unwrap();
    assert_eq!(models.len(), 1);
    assert_eq!(models[0]["scenario"], "S1");
    assert_eq!(models[0]["seed"], 4);

    let (status, report) = call(&app, "GET", "/api/screen?model_id=s1-b0.5-seed4&k=20", None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["k"], 20);
    let g = &report["gender_counts"];
    assert_eq!(g["G0"].as_u64().unwrap() + g["G1"].as_u64().unwrap(), 20);

    let (status, _) = call(&app, "GET", "/api/screen?model_id=s1-b0.5-seed4&k=100000", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, restarted) = app_again(dir.path());
    let (_, list2) = call(&restarted, "GET", "/api/models", None).await;
    assert_eq!(list, list2);
}

fn app_again(dir: &Path) -> (Arc<AppState>, Router) {
    app(dir, 1200)
}

#[tokio::test]
async fn scoring_is_read_only_and_concurrency_safe() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(dir.path(), 1200);
    // Materialize every model the requests below touch.
    let requests: Vec<Value> = ["G0", "G1"]
        .into_iter()
        .flat_map(|g| {
            [
                candidate(g, "traditional_ai", 0.7, &["gender"]),
                candidate(g, "traditional_ai", 0.8, &["embedding"]),
                candidate(g, "traditional_ai", 0.75, &[]),
                candidate(g, "traditional_ai", 0.75, &["gender", "embedding"]),
                candidate(g, "responsible_ai", 0.75, &["gender"]),
                candidate(g, "human", 0.75, &[]),
            ]
        })
        .collect();
    let mut sequential = Vec::new();
    for r in &requests {
        sequential.push(call(&app, "POST", "/api/score", Some(r.clone())).await.1);
    }
    let ids: Vec<&str> = sequential.iter().filter_map(|v| v["model_id"].as_str()).collect();
    assert!(ids.contains(&"s2-b0.75-seed1") && ids.contains(&"s4-b0.75-seed1"));
    assert!(ids.contains(&"s3-b0.75-seed1") && ids.contains(&"s5-b0.75-seed1"));
    assert!(ids.contains(&"custom-mgf-b-b0.75-seed1"));
    assert_eq!(state.entries().len(), 5);

    let before = snapshot(dir.path());
    let mut handles = Vec::new();
    for round in 0..4 {
        for (i, r) in requests.iter().enumerate() {
            let (app, r) = (app.clone(), r.clone());
            handles.push(tokio::spawn(async move {
                (i, round, call(&app, "POST", "/api/score", Some(r)).await.1)
            }));
        }
    }
    for h in handles {
        let (i, _, v) = h.await.unwrap();
        assert_eq!(v, sequential[i]);
    }
    assert_eq!(snapshot(dir.path()), before);
}

#[tokio::test(flavor = "multi_thread")]
async fn full_size_models_on_the_what_if_controls() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 24_000);
    for s in ["S2", "S5"] {
        let (status, v) = call(&app, "POST", "/api/train", Some(json!({"scenario": s, "bias_level": 0.75, "seed": 1}))).await;
        assert_eq!(status, StatusCode::OK, "{v}");
    }
    let (_, report) = call(&app, "GET", "/api/screen?model_id=s5-b0.75-seed1&k=100", None).await;
    assert!(report["demographic_difference"].as_f64().unwrap() <= 10.0, "{report}");
    let (_, report) = call(&app, "GET", "/api/screen?model_id=s2-b0.75-seed1&k=100", None).await;
    assert!(report["demographic_difference"].as_f64().unwrap() >= 50.0, "{report}");

    let flip = |method: &'static str, inputs: &'static [&'static str]| {
        let app = app.clone();
        async move {
            let a = score(&app, candidate("G0", method, 0.75, inputs)).await;
            let b = score(&app, candidate("G1", method, 0.75, inputs)).await;
            (a - b).abs()
        }
    };
    assert!(flip("traditional_ai", &["gender"]).await >= 0.05);
    assert!(flip("responsible_ai", &[]).await <= 0.02);
}

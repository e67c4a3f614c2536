//! Route contracts exercised in-process through `tower::ServiceExt`.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt as _;
use mixinv::config::RunConfig;
use mixinv::cooperative::TrainMode;
use mixinv::data::{filter_by_age, load_dataset, split};
use mixinv::imputation::Variant;
use mixinv::runs::execute_train;
use mixinv_server::{router, AppState, ErrorBody, Health, InferResponse, ModelInfo};
use serde_json::{json, Value};
use tower::ServiceExt as _;

fn dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/concrete.csv")
}

fn small_config(out: &Path, variant: Variant) -> RunConfig {
    RunConfig {
        dataset: dataset(),
        output_dir: out.to_path_buf(),
        variant,
        surrogate_hidden: vec![16],
        encoder_hidden: vec![16],
        decoder_hidden: vec![16],
        latent_dim: 4,
        surrogate_epochs: 20,
        epochs: 20,
        eval_levels: vec![5],
        ..RunConfig::default()
    }
}

/// A model directory with one DAE and one DVAE run, trained once.
fn models_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        for v in [Variant::Dae, Variant::Dvae] {
            execute_train(&small_config(dir.path(), v), None).unwrap();
        }
        dir
    })
    .path()
}

fn app() -> axum::Router {
    router(Arc::new(AppState::load(models_dir()).unwrap()), true)
}

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn scenario_body(model: &str) -> Value {
    json!({
        "fixed": {"bfs": 212.5, "water": 155.7, "sp": 14.3, "fa": 880.4, "age": 28},
        "target_strength": 55.5,
        "model": model,
        "candidates": 1
    })
}

#[tokio::test]
async fn health_and_model_listing() {
    let (s, v) = call(app(), "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: Health = serde_json::from_value(v).unwrap();
    assert_eq!((h.status.as_str(), h.models), ("ok", 2));
    let (s, v) = call(app(), "GET", "/api/models", None).await;
    assert_eq!(s, StatusCode::OK);
    let list: Vec<ModelInfo> = serde_json::from_value(v).unwrap();
    let ids: Vec<&str> = list.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, ["conn-dae-seed0", "conn-dvae-seed0"]);
    assert_eq!(list[0].mode, TrainMode::Cooperative);
    assert_eq!(list[0].dataset.rows, 749);
}

#[tokio::test]
async fn empty_directory_serves_nothing_but_is_healthy() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(AppState::load(dir.path()).unwrap()), false);
    let (_, v) = call(app.clone(), "GET", "/api/models", None).await;
    assert_eq!(v, json!([]));
    let (_, v) = call(app.clone(), "GET", "/api/health", None).await;
    assert_eq!(v, json!({"status": "ok", "models": 0}));
    let (s, v) = call(app, "GET", "/api/bounds", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!([])));
}

#[tokio::test]
async fn malformed_checkpoint_is_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good");
    copy_dir(&models_dir().join("conn-dae-seed0"), &good);
    let bad = dir.path().join("bad");
    copy_dir(&models_dir().join("conn-dvae-seed0"), &bad);
    std::fs::write(bad.join("imputer.json"), "{\"format\":\"something-else/9\",\"model\":{}}").unwrap();
    let state = AppState::load(dir.path()).unwrap();
    assert_eq!(state.models.keys().collect::<Vec<_>>(), ["conn-dae-seed0"]);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
    }
}

#[tokio::test]
async fn scenario_request_echoes_and_stays_in_bounds() {
    let body = scenario_body("conn-dae-seed0");
    let (s, v) = call(app(), "POST", "/api/infer", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: InferResponse = serde_json::from_value(v).unwrap();
    assert_eq!(r.candidates.len(), 1);
    let c = &r.candidates[0];
    for (k, want) in body["fixed"].as_object().unwrap() {
        assert_eq!(c.design[k].to_bits(), want.as_f64().unwrap().to_bits(), "{k}");
    }
    for b in &r.bounds {
        if !body["fixed"].as_object().unwrap().contains_key(&b.name) {
            let v = c.design[&b.name];
            assert!(b.min <= v && v <= b.max, "{} = {v} outside [{}, {}]", b.name, b.min, b.max);
        }
    }
    assert_eq!(c.deviation, c.predicted_strength - 55.5);
    assert_eq!(r.model.id, "conn-dae-seed0");
}

#[tokio::test]
async fn all_fixed_echoes_with_score() {
    let fixed = json!({"cement": 300.0, "bfs": 100.0, "pfa": 0.0, "water": 180.0, "sp": 5.0, "ca": 950.0, "fa": 780.0, "age": 28.0});
    let body = json!({"fixed": fixed, "target_strength": 40.0, "model": "conn-dae-seed0"});
    let (s, v) = call(app(), "POST", "/api/infer", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    let r: InferResponse = serde_json::from_value(v).unwrap();
    for (k, want) in fixed.as_object().unwrap() {
        assert_eq!(r.candidates[0].design[k], want.as_f64().unwrap());
    }
    assert!(r.candidates[0].predicted_strength.is_finite());
}

#[tokio::test]
async fn validation_errors_name_the_field() {
    let mut body = scenario_body("conn-dae-seed0");
    body["fixed"]["cement"] = json!(-5);
    let (s, v) = call(app(), "POST", "/api/infer", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let e: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(e.fields.iter().map(|f| f.field.as_str()).collect::<Vec<_>>(), ["cement"]);

    let mut body = scenario_body("conn-dae-seed0");
    body["fixed"]["slag"] = json!(1);
    body["target_strength"] = json!(-1);
    body["candidates"] = json!(3);
    let (s, v) = call(app(), "POST", "/api/infer", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let e: ErrorBody = serde_json::from_value(v).unwrap();
    let mut names: Vec<&str> = e.fields.iter().map(|f| f.field.as_str()).collect();
    names.sort();
    assert_eq!(names, ["candidates", "slag", "target_strength"]);

    let (s, _) = call(app(), "POST", "/api/infer", Some(json!({"model": "conn-dae-seed0"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_model_is_404_and_overconstrained_sampling_is_422() {
    let (s, _) = call(app(), "POST", "/api/infer", Some(scenario_body("nope"))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(app(), "GET", "/api/bounds?model=nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let fixed = json!({"cement": 300.0, "bfs": 100.0, "pfa": 0.0, "water": 180.0, "sp": 5.0, "ca": 950.0, "fa": 780.0, "age": 28.0});
    let body = json!({"fixed": fixed, "target_strength": 40.0, "model": "conn-dvae-seed0", "candidates": 4});
    let (s, v) = call(app(), "POST", "/api/infer", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
}

#[tokio::test]
async fn generative_candidates_are_reproducible_and_order_free() {
    let mut a = scenario_body("conn-dvae-seed0");
    a["candidates"] = json!(5);
    a["seed"] = json!(7);
    let b = scenario_body("conn-dae-seed0");
    let (_, a1) = call(app(), "POST", "/api/infer", Some(a.clone())).await;
    let (_, b1) = call(app(), "POST", "/api/infer", Some(b.clone())).await;
    let (_, b2) = call(app(), "POST", "/api/infer", Some(b)).await;
    let (_, a2) = call(app(), "POST", "/api/infer", Some(a)).await;
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
    assert_eq!(a1["candidates"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn bounds_bracket_the_training_split() {
    let (s, v) = call(app(), "GET", "/api/bounds?model=conn-dae-seed0", None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, again) = call(app(), "GET", "/api/bounds?model=conn-dae-seed0", None).await;
    assert_eq!(v, again);
    let cfg = small_config(models_dir(), Variant::Dae);
    let ds = filter_by_age(&load_dataset(&cfg.dataset).unwrap(), 28.0).unwrap();
    let train = split(&ds, cfg.split_spec(0)).unwrap().train;
    let b = v.as_array().unwrap();
    assert_eq!(b.len(), 8);
    let cement = b.iter().find(|e| e["name"] == "cement").unwrap();
    assert_eq!(cement["unit"], "kg/m3");
    assert_eq!(b.iter().find(|e| e["name"] == "age").unwrap()["unit"], "days");
    let values: Vec<f64> = train.rows.iter().map(|r| r.cement).collect();
    let (lo, hi) = (cement["min"].as_f64().unwrap(), cement["max"].as_f64().unwrap());
    assert!(values.iter().all(|&c| lo <= c && c <= hi));
    assert!(values.contains(&lo) && values.contains(&hi));
}

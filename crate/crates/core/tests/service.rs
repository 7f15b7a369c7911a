mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use cloneforge::metrics::{calibration_sweep, delta_grid, LabeledScores};
use cloneforge::service_api::{router, AppState, ServiceConfig, HISTOGRAM_BINS};
use cloneforge::trainer::TrainConfig;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const N_TEST_POS: usize = 50;

fn config(dir: &std::path::Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(dir);
    c.train = TrainConfig {
        n_pos: 32,
        n_unl: 32,
        batch_pos: 16,
        batch_unl: 16,
        epochs: 2,
        ..TrainConfig::default()
    };
    c.n_test_pos = N_TEST_POS;
    c
}

fn open(dir: &std::path::Path) -> AppState {
    AppState::open(Arc::new(common::scene_corpus(60, 9)), config(dir)).unwrap()
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(state, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn wait_done(state: &AppState, job: u64) -> Value {
    for _ in 0..1200 {
        let (s, v) = call_json(state, "GET", &format!("/jobs/{job}"), None).await;
        assert_eq!(s, StatusCode::OK);
        match v["state"].as_str().unwrap() {
            "done" => return v,
            "failed" => panic!("job failed: {v}"),
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("job {job} did not finish");
}

async fn train(state: &AppState, anchor: usize) -> Value {
    let (s, v) = call_json(state, "POST", &format!("/anchors/{anchor}/train"), Some(json!({"seed": 1}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    wait_done(state, v["job_id"].as_u64().unwrap()).await
}

#[tokio::test]
async fn corpus_paging_and_thumbnails() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path());
    let (s, v) = call_json(&state, "GET", "/corpus?offset=10&limit=5", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 60);
    let ids: Vec<u64> = v["items"].as_array().unwrap().iter().map(|i| i["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [10, 11, 12, 13, 14]);
    assert_eq!(v["items"][0]["thumbnail_url"], "/images/10");
    let (_, tail) = call_json(&state, "GET", "/corpus?offset=58&limit=50", None).await;
    assert_eq!(tail["items"].as_array().unwrap().len(), 2);

    let (s, png) = call(&state, "GET", "/images/3", None).await;
    assert_eq!(s, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (128, 128));
    let (s, _) = call(&state, "GET", "/images/60", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn training_jobs_are_idempotent_per_anchor_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path());
    let (s, _) = call_json(&state, "POST", "/anchors/60/train", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&state, "POST", "/anchors/2/train", Some(json!({"seed": "x"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, first) = call_json(&state, "POST", "/anchors/2/train", Some(json!({"seed": 1}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, again) = call_json(&state, "POST", "/anchors/2/train", Some(json!({"seed": 1}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(first["job_id"], again["job_id"]);

    let mut other = config(dir.path()).train;
    other.seed = 1;
    other.epochs = 3;
    let (s, _) = call_json(&state, "POST", "/anchors/2/train", Some(json!({"config": other}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let done = wait_done(&state, first["job_id"].as_u64().unwrap()).await;
    let r = &done["result"];
    let (tau, mu, m) = (r["tau"].as_f64().unwrap(), r["mu"].as_f64().unwrap(), r["m"].as_f64().unwrap());
    assert!((tau - (mu + m)).abs() < 1e-5);
    assert_eq!(done["progress"]["step"], done["progress"]["total"]);
    let (s, _) = call_json(&state, "GET", "/jobs/99", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn candidates_follow_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path());
    let (s, _) = call_json(&state, "GET", "/anchors/5/candidates", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    train(&state, 4).await;

    let (s, v) = call_json(&state, "GET", "/anchors/4/candidates?k=9", None).await;
    assert_eq!(s, StatusCode::OK);
    let cands = v["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 9);
    assert!(v["least_similar"].is_object());
    let tau = v["tau"].as_f64().unwrap();
    let trained = state.trained(4).unwrap();
    for c in cands {
        let id = c["candidate_id"].as_u64().unwrap() as usize;
        assert_eq!(c["is_clone"].as_bool().unwrap(), trained.scores.is_clone[id]);
        assert!(c["score"].as_f64().unwrap() >= v["least_similar"]["score"].as_f64().unwrap());
    }
    for w in cands.windows(2) {
        let (a, b) = (w[0]["score"].as_f64().unwrap(), w[1]["score"].as_f64().unwrap());
        assert!(a > b || (a == b && w[0]["candidate_id"].as_u64() < w[1]["candidate_id"].as_u64()));
    }
    assert!((tau - f64::from(trained.model.tau)).abs() < 1e-6);

    let (_, clamped) = call_json(&state, "GET", "/anchors/4/candidates?k=60&delta=3", None).await;
    assert_eq!(clamped["delta"], 0.5);
    let mut prev: Option<Vec<bool>> = None;
    for d in delta_grid(21) {
        let (_, v) = call_json(&state, "GET", &format!("/anchors/4/candidates?k=60&delta={d}"), None).await;
        let flags: Vec<bool> = v["candidates"].as_array().unwrap().iter().map(|c| c["is_clone"].as_bool().unwrap()).collect();
        if let Some(p) = &prev {
            assert!(p.iter().zip(&flags).all(|(a, b)| !a || *b), "raising delta removed a clone");
        }
        prev = Some(flags);
    }
}

#[tokio::test]
async fn decisions_are_logged_append_only_and_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("decisions.jsonl");
    let before;
    {
        let state = open(dir.path());
        let (s, _) = call_json(&state, "POST", "/anchors/3/decisions", Some(json!({"candidate_id": 1, "action": "accept"}))).await;
        assert_eq!(s, StatusCode::CONFLICT);
        train(&state, 3).await;
        let (s, _) = call_json(&state, "POST", "/anchors/3/decisions", Some(json!({"candidate_id": 1, "action": "merge"}))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        let (s, _) = call_json(&state, "POST", "/anchors/3/decisions", Some(json!({"candidate_id": 600, "action": "accept"}))).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        assert_eq!(std::fs::metadata(&log).unwrap().len(), 0);

        let (s, d) = call_json(
            &state,
            "POST",
            "/anchors/3/decisions",
            Some(json!({"candidate_id": 7, "action": "accept", "delta": 0.2, "note": "same pot"})),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED);
        let lines = std::fs::read_to_string(&log).unwrap();
        assert_eq!(lines.lines().count(), 1);
        let logged: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        let trained = state.trained(3).unwrap();
        assert_eq!(logged["score"].as_f64().unwrap() as f32, trained.scores.scores[7]);
        assert_eq!(logged["tau"].as_f64().unwrap() as f32, trained.model.tau);
        assert_eq!(logged["delta"], 0.2);
        assert_eq!(logged["action"], "accept");
        assert!(logged["timestamp"].as_str().unwrap().ends_with('Z'));
        assert_eq!(d, logged);

        let size = std::fs::metadata(&log).unwrap().len();
        let (s, _) = call_json(&state, "POST", "/anchors/3/decisions", Some(json!({"candidate_id": 7, "action": "reject"}))).await;
        assert_eq!(s, StatusCode::CREATED);
        assert!(std::fs::metadata(&log).unwrap().len() > size);
        let (_, summary) = call_json(&state, "GET", "/anchors/3/decisions", None).await;
        assert_eq!(summary["total_entries"], 2);
        assert_eq!(summary["latest"][0]["action"], "reject");

        let (_, c) = call_json(&state, "GET", "/anchors/3/candidates?k=5", None).await;
        before = c;
    }
    // Restart on the same state directory.
    let state = open(dir.path());
    assert_eq!(state.decisions().len(), 2);
    let (_, summary) = call_json(&state, "GET", "/anchors/3/decisions", None).await;
    assert_eq!(summary["total_entries"], 2);
    wait_done(&state, 0).await;
    let (s, after) = call_json(&state, "GET", "/anchors/3/candidates?k=5", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
    let (s, again) = call_json(&state, "POST", "/anchors/3/train", Some(json!({"seed": 1}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(again["job_id"], 0);
}

#[tokio::test]
async fn stats_histograms_and_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path());
    let (s, _) = call_json(&state, "GET", "/anchors/8/stats", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    train(&state, 8).await;
    let (s, v) = call_json(&state, "GET", "/anchors/8/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, again) = call_json(&state, "GET", "/anchors/8/stats", None).await;
    assert_eq!(v, again);

    let trained = state.trained(8).unwrap();
    let corpus_norms: Vec<f64> = trained.scores.scores.iter().map(|s| -f64::from(*s)).collect();
    let pos_norms: Vec<f64> = trained.test_pos_norms.iter().map(|&n| f64::from(n)).collect();
    let max = corpus_norms.iter().chain(&pos_norms).fold(0.0f64, |a, &b| a.max(b));

    let h = &v["histograms"];
    let edges: Vec<f64> = h["edges"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(edges.len(), HISTOGRAM_BINS + 1);
    assert_eq!(edges[0], 0.0);
    assert!((edges[HISTOGRAM_BINS] - max).abs() < 1e-12);
    let counts = |key: &str| -> Vec<u64> { h[key].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect() };
    assert_eq!(counts("positive").iter().sum::<u64>(), N_TEST_POS as u64);
    assert_eq!(counts("corpus").iter().sum::<u64>(), 60);
    // Independent binning: value v lands in bin i when edges[i] ≤ v < edges[i+1]
    // (the last bin also takes v = max).
    for (key, raw) in [("positive", &pos_norms), ("corpus", &corpus_norms)] {
        let mut expect = vec![0u64; HISTOGRAM_BINS];
        for &x in raw.iter() {
            let i = (0..HISTOGRAM_BINS)
                .find(|&i| x < edges[i + 1])
                .unwrap_or(HISTOGRAM_BINS - 1);
            expect[i] += 1;
        }
        assert_eq!(counts(key), expect, "{key}");
    }

    let negs: Vec<f32> = trained
        .scores
        .scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 8)
        .map(|(_, &s)| s)
        .collect();
    let pos: Vec<f32> = trained.test_pos_norms.iter().map(|n| -n).collect();
    let expect = calibration_sweep(&LabeledScores::from_f32(&pos, &negs), f64::from(trained.model.tau), &delta_grid(21));
    assert_eq!(v["calibration"], serde_json::to_value(&expect).unwrap());
}

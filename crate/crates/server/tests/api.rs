use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use uvap_core::runhub::{Run, RunConfig, Stage};
use uvap_server::{router, AppState};

fn template() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::open_or_create(&dir.path().join("r1"), Some(RunConfig::smoke())).unwrap();
        run.synth().unwrap();
        run.train_base().unwrap();
        run.prelearn().unwrap();
        run.augment().unwrap();
        run.curate_auto().unwrap();
        run.dual_train().unwrap();
        dir
    })
    .path()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    state: Arc<AppState>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(template(), dir.path());
    let root = dir.path().to_path_buf();
    let state = Arc::new(AppState::open(&root, "r1").unwrap());
    Fixture { _dir: dir, root, state }
}

async fn call(f: &Fixture, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(f.state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(f: &Fixture, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(f, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn pool(f: &Fixture) -> Vec<uvap_core::augment::Candidate> {
    Run::open(&f.root.join("r1")).unwrap().pool().unwrap()
}

#[tokio::test]
async fn lists_runs_with_stage() {
    let f = fixture();
    let (s, v) = call_json(&f, "GET", "/api/v1/runs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([{ "id": "r1", "stage": "dual_trained" }]));
}

#[tokio::test]
async fn candidates_are_the_auto_kept_pool() {
    let f = fixture();
    let (s, v) = call_json(&f, "GET", "/api/v1/runs/r1/candidates", None).await;
    assert_eq!(s, StatusCode::OK);
    let mut expected: Vec<_> = pool(&f).into_iter().filter(|c| c.auto_kept).collect();
    expected.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    assert_eq!(v["total"], expected.len());
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.len(), expected.len());
    for (item, c) in items.iter().zip(&expected) {
        assert_eq!(item["id"], c.id);
        assert_eq!(item["score"].as_f64().unwrap(), c.score);
        assert_eq!(item["auto_kept"], true);
        assert_eq!(item["human_decision"], "undecided");
        assert_eq!(item["image_url"], format!("/api/v1/runs/r1/images/{}.png", c.id));
    }

    let (_, plus) = call_json(&f, "GET", "/api/v1/runs/r1/candidates?set=plus", None).await;
    assert!(plus["items"].as_array().unwrap().iter().all(|i| i["set"] == "plus"));
    let (_, later) = call_json(&f, "GET", "/api/v1/runs/r1/candidates?page=1", None).await;
    assert!(later["items"].as_array().unwrap().is_empty());
    let (s, _) = call_json(&f, "GET", "/api/v1/runs/r1/candidates?set=other", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn decision_round_trip() {
    let f = fixture();
    let kept = pool(&f).into_iter().find(|c| c.auto_kept).unwrap();
    let body = json!({ "candidate_id": kept.id, "decision": "keep" });
    let (s, v) = call_json(&f, "POST", "/api/v1/runs/r1/decisions", Some(body)).await;
    assert_eq!((s, v), (StatusCode::OK, json!({ "ok": true })));

    let (_, v) = call_json(&f, "GET", "/api/v1/runs/r1/candidates", None).await;
    let item = v["items"].as_array().unwrap().iter().find(|i| i["id"] == kept.id).unwrap().clone();
    assert_eq!(item["human_decision"], "keep");

    let body = json!({ "candidate_id": kept.id, "decision": "reject" });
    call_json(&f, "POST", "/api/v1/runs/r1/decisions", Some(body)).await;
    let (_, v) = call_json(&f, "GET", "/api/v1/runs/r1/candidates", None).await;
    let item = v["items"].as_array().unwrap().iter().find(|i| i["id"] == kept.id).unwrap().clone();
    assert_eq!(item["human_decision"], "reject");

    let log = std::fs::read_to_string(f.root.join("r1/decisions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[tokio::test]
async fn decisions_are_validated() {
    let f = fixture();
    let dropped = pool(&f).into_iter().find(|c| !c.auto_kept).unwrap();
    let body = json!({ "candidate_id": dropped.id, "decision": "keep" });
    let (s, _) = call_json(&f, "POST", "/api/v1/runs/r1/decisions", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let body = json!({ "candidate_id": 999_999, "decision": "keep" });
    let (s, _) = call_json(&f, "POST", "/api/v1/runs/r1/decisions", Some(body)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(!f.root.join("r1/decisions.jsonl").exists());
}

#[tokio::test]
async fn unknown_run_is_not_found() {
    let f = fixture();
    for uri in ["/api/v1/runs/nope/candidates", "/api/v1/runs/nope/reports/latest", "/api/v1/runs/nope/images/00000.png"] {
        let (s, _) = call(&f, "GET", uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _) = call(&f, "POST", "/api/v1/runs/nope/finalize", Some(json!({ "m": 2 }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn serves_candidate_png() {
    let f = fixture();
    let c = pool(&f).into_iter().next().unwrap();
    let (s, bytes) = call(&f, "GET", &format!("/api/v1/runs/r1/images/{}.png", c.id), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bytes, std::fs::read(f.root.join("r1/candidates").join(&c.path)).unwrap());
    let (s, _) = call(&f, "GET", "/api/v1/runs/r1/images/../config.json", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn finalize_counts_and_shortfall() {
    let f = fixture();
    let (s, v) = call_json(&f, "POST", "/api/v1/runs/r1/finalize", Some(json!({ "m": 2 }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({ "plus_count": 2, "minus_count": 2 }));
    let run = Run::open(&f.root.join("r1")).unwrap();
    assert_eq!(run.state.stage, Stage::Curated);

    let (s, v) = call_json(&f, "POST", "/api/v1/runs/r1/finalize", Some(json!({ "m": 50 }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("more keeps"));
}

#[tokio::test]
async fn finalize_conflicts_with_sampling() {
    let f = fixture();
    let guard = f.state.sampling().await;
    let (s, _) = call(&f, "POST", "/api/v1/runs/r1/finalize", Some(json!({ "m": 2 }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    drop(guard);
    let (s, _) = call(&f, "POST", "/api/v1/runs/r1/finalize", Some(json!({ "m": 2 }))).await;
    assert_eq!(s, StatusCode::OK);
}

async fn preview_bytes(f: &Fixture, body: Value) -> Vec<Vec<u8>> {
    let (s, v) = call_json(f, "POST", "/api/v1/runs/r1/preview", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let mut out = Vec::new();
    for url in v["images"].as_array().unwrap() {
        let (s, bytes) = call(f, "GET", url.as_str().unwrap(), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(&bytes[1..4], b"PNG");
        out.push(bytes);
    }
    out
}

#[tokio::test]
async fn preview_at_zero_lambda_matches_literal_tgt() {
    let f = fixture();
    let adjusted = preview_bytes(
        &f,
        json!({ "prompt": "a photo of a sks color circle", "lambda": 0.0, "seed": 5, "count": 2 }),
    )
    .await;
    let literal = preview_bytes(&f, json!({ "prompt": "a photo of a tgt color circle", "seed": 5, "count": 2 })).await;
    assert_eq!(adjusted.len(), 2);
    assert_eq!(adjusted, literal);
    let moved = preview_bytes(
        &f,
        json!({ "prompt": "a photo of a sks color circle", "lambda": 0.5, "seed": 5, "count": 2 }),
    )
    .await;
    assert_ne!(moved, adjusted);
}

#[tokio::test]
async fn preview_rejects_bad_requests() {
    let f = fixture();
    let (s, _) = call(&f, "POST", "/api/v1/runs/r1/preview", Some(json!({ "prompt": "a photo of a sks star", "seed": 1, "count": 0 }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&f, "POST", "/api/v1/runs/r1/preview", Some(json!({ "prompt": "a photo of a zebra", "seed": 1 }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&f, "GET", "/api/v1/runs/r1/previews/missing_00.png", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn report_is_not_found_before_evaluation() {
    let f = fixture();
    let (s, _) = call(&f, "GET", "/api/v1/runs/r1/reports/latest", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let report = json!({ "n_images": 3 });
    std::fs::create_dir_all(f.root.join("r1/reports")).unwrap();
    std::fs::write(f.root.join("r1/reports/latest.json"), report.to_string()).unwrap();
    let (s, v) = call_json(&f, "GET", "/api/v1/runs/r1/reports/latest", None).await;
    assert_eq!((s, v), (StatusCode::OK, report));
}

#[tokio::test]
async fn service_holds_the_run_lock() {
    let f = fixture();
    let mut run = Run::open(&f.root.join("r1")).unwrap();
    assert!(matches!(run.dual_train(), Err(uvap_core::error::Error::Locked(_))));
    assert!(matches!(AppState::open(&f.root, "r1"), Err(uvap_core::error::Error::Locked(_))));
    let Fixture { _dir, root, state } = f;
    drop(state);
    assert!(!root.join("r1/service.lock").exists());
    run.dual_train().unwrap();
}

#[tokio::test]
async fn refuses_runs_before_candidates() {
    let dir = tempfile::tempdir().unwrap();
    Run::open_or_create(&dir.path().join("fresh"), Some(RunConfig::smoke())).unwrap();
    let err = AppState::open(dir.path(), "fresh").err().unwrap();
    assert_eq!(err.to_string(), "requires stage: candidates_ready");
}

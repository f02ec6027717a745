use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration};
use conjoint_core::dataset::ChoiceDataset;
use conjoint_core::design::DesignSpec;
use conjoint_service::{read_log, router, ManualClock, SeededEntropy, ServiceConfig, SurveyService, EVENTS_FILE};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(seed: u64, clock: Arc<ManualClock>) -> ServiceConfig {
    ServiceConfig {
        clock,
        entropy: Arc::new(SeededEntropy::new(seed)),
        ..ServiceConfig::default()
    }
}

fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(DateTime::UNIX_EPOCH + Duration::days(20_000)))
}

fn app_with(svc: SurveyService) -> (Router, Arc<SurveyService>) {
    let svc = Arc::new(svc);
    (router(svc.clone(), None), svc)
}

fn memory_app() -> (Router, Arc<SurveyService>, Arc<ManualClock>) {
    let c = clock();
    let svc = SurveyService::in_memory(Arc::new(DesignSpec::bundled()), config(1, c.clone()));
    let (app, svc) = app_with(svc);
    (app, svc, c)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, text) = call(app, method, uri, body).await;
    (s, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

fn answers() -> Value {
    json!({
        "leftright": 7,
        "ethnicity": "Asian",
        "age": "31 - 40 years old",
        "partisanship": "Independent",
        "polint": "Very interested",
        "gender": "Female",
        "educ": "Graduate studies",
    })
}

async fn create(app: &Router) -> String {
    let (s, v) = call_json(app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn finish_tasks(app: &Router, id: &str) {
    for n in 1..=10 {
        let (s, v) = call_json(app, "POST", &format!("/sessions/{id}/tasks/{n}/choice"), Some(json!({"profile_index": 1 + n % 2}))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
}

async fn complete(app: &Router) -> String {
    let id = create(app).await;
    finish_tasks(app, &id).await;
    let (s, v) = call_json(app, "POST", &format!("/sessions/{id}/questionnaire"), Some(json!({"answers": answers()}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    id
}

#[tokio::test]
async fn creation_gives_ten_tasks_and_distinct_ids() {
    let (app, _, _) = memory_app();
    let (s, a) = call_json(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a["tasks_total"], 10);
    let (_, b) = call_json(&app, "POST", "/sessions", None).await;
    assert_ne!(a["session_id"], b["session_id"]);
}

#[tokio::test]
async fn next_task_walks_through_the_plan() {
    let (app, _, _) = memory_app();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/tasks/next");
    let (s, first) = call_json(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["task_index"], 1);
    let (_, again) = call_json(&app, "GET", &uri, None).await;
    assert_eq!(first, again);

    // Only the current task is revealed.
    let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["task_index", "tasks_total", "attribute_display_order", "profiles"]);
    let profiles = first["profiles"].as_array().unwrap();
    assert_eq!(profiles.len(), 2);
    let order: Vec<&str> = first["attribute_display_order"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(order.len(), 9);
    for p in profiles {
        let shown: Vec<&String> = p.as_object().unwrap().keys().collect();
        assert_eq!(shown, order);
    }

    call_json(&app, "POST", &format!("/sessions/{id}/tasks/1/choice"), Some(json!({"profile_index": 2}))).await;
    let (_, second) = call_json(&app, "GET", &uri, None).await;
    assert_eq!(second["task_index"], 2);

    for n in 2..=10 {
        call_json(&app, "POST", &format!("/sessions/{id}/tasks/{n}/choice"), Some(json!({"profile_index": 1}))).await;
    }
    let (s, v) = call_json(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["next"], format!("/sessions/{id}/questionnaire"));
}

#[tokio::test]
async fn choices_are_recorded_once() {
    let (app, svc, _) = memory_app();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/tasks/1/choice");
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["next_task"], 2);
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"profile_index": 2}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    // One creation and one choice, despite three submissions.
    assert_eq!(svc.events().len(), 2);

    for bad in [0, 3] {
        let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/tasks/2/choice"), Some(json!({"profile_index": bad}))).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/tasks/4/choice"), Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/tasks/11/choice"), Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/tasks/two/choice"), Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/tasks/2/choice"), Some(json!({"choice": 1}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call_json(&app, "POST", "/sessions/nope/tasks/1/choice", Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, "GET", "/sessions/nope/tasks/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn questionnaire_rules() {
    let (app, _, _) = memory_app();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/questionnaire");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"answers": answers()}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    finish_tasks(&app, &id).await;

    let mut bad = answers();
    bad["leftright"] = json!(11);
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"answers": bad}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["question"], "q1");

    let mut missing = answers();
    missing.as_object_mut().unwrap().remove("gender");
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"answers": missing}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["question"], "q6");

    let mut stale = answers();
    stale["polint"] = json!("Extremely interested");
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"answers": stale}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["question"], "q5");

    // Ids work as keys, and the scale accepts a string.
    let mut by_id = answers();
    let obj = by_id.as_object_mut().unwrap();
    obj.remove("leftright");
    obj.insert("q1".into(), json!("7"));
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"answers": by_id}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "complete");

    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"answers": answers()}))).await;
    assert_eq!(s, StatusCode::OK);
    let mut changed = answers();
    changed["gender"] = json!("Male");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"answers": changed}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, summary) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(summary["status"], "complete");
    assert_eq!(summary["tasks_answered"], 10);
}

#[tokio::test]
async fn questionnaire_is_served_from_the_design() {
    let (app, _, _) = memory_app();
    let (s, v) = call_json(&app, "GET", "/questionnaire", None).await;
    assert_eq!(s, StatusCode::OK);
    let items = v.as_array().unwrap();
    assert_eq!(items.len(), 7);
    assert_eq!(items[0]["id"], "q1");
    assert_eq!(items[0]["scale"], json!({"min": 0, "max": 10}));
    assert_eq!(items[3]["options"], json!(["Republican", "Democrat", "Independent", "Something else"]));
}

#[tokio::test]
async fn export_contains_only_complete_sessions() {
    let (app, _, _) = memory_app();
    let (s, empty) = call(&app, "GET", "/export?status=complete", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(empty.lines().count(), 1);
    assert!(empty.starts_with("respondent_id,"));

    let done = complete(&app).await;
    let partial = create(&app).await;
    call(&app, "POST", &format!("/sessions/{partial}/tasks/1/choice"), Some(json!({"profile_index": 1}))).await;
    let (_, csv) = call(&app, "GET", "/export?status=complete", None).await;
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.lines().skip(1).all(|l| l.starts_with(&done)));
    let ds = ChoiceDataset::ingest_csv(&csv, Arc::new(DesignSpec::bundled())).unwrap();
    assert_eq!(ds.n_respondents(), 1);
    let (_, default) = call(&app, "GET", "/export", None).await;
    assert_eq!(default, csv);
    let (s, _) = call(&app, "GET", "/export?status=in_progress", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn idle_sessions_are_abandoned() {
    let (app, _, clock) = memory_app();
    let id = create(&app).await;
    call(&app, "POST", &format!("/sessions/{id}/tasks/1/choice"), Some(json!({"profile_index": 1}))).await;
    clock.advance(Duration::hours(23));
    let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["status"], "in_progress");
    clock.advance(Duration::hours(2));
    let (_, v) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["status"], "abandoned");
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/tasks/2/choice"), Some(json!({"profile_index": 1}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call_json(&app, "GET", &format!("/sessions/{id}/tasks/next"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn unwritable_store_gives_503() {
    let dir = tempfile::tempdir().unwrap();
    // The log path is a directory, so it can never be opened for append.
    std::fs::create_dir(dir.path().join(EVENTS_FILE)).unwrap();
    let svc = SurveyService::open(Arc::new(DesignSpec::bundled()), dir.path(), config(1, clock())).unwrap();
    let (app, _) = app_with(svc);
    let (s, v) = call_json(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE, "{v}");
    assert_eq!(v["error"], "unavailable");
}

#[tokio::test]
async fn reopening_the_store_replays_state() {
    let dir = tempfile::tempdir().unwrap();
    let design = Arc::new(DesignSpec::bundled());
    let c = clock();
    let svc = SurveyService::open(design.clone(), dir.path(), config(5, c.clone())).unwrap();
    let (app, svc) = app_with(svc);
    complete(&app).await;
    let partial = create(&app).await;
    call(&app, "POST", &format!("/sessions/{partial}/tasks/1/choice"), Some(json!({"profile_index": 2}))).await;
    complete(&app).await;
    let export = svc.export_csv().unwrap();

    let records = read_log(&dir.path().join(EVENTS_FILE)).unwrap();
    assert_eq!(records.len(), svc.events().len());
    assert!(records.iter().enumerate().all(|(i, r)| r.seq == i as u64 + 1));

    let reopened = SurveyService::open(design.clone(), dir.path(), config(6, c.clone())).unwrap();
    assert_eq!(reopened.sessions(), svc.sessions());
    assert_eq!(reopened.export_csv().unwrap(), export);

    // The reopened service continues the same log.
    let (app2, reopened) = app_with(reopened);
    let (s, _) = call_json(&app2, "GET", &format!("/sessions/{partial}/tasks/next"), None).await;
    assert_eq!(s, StatusCode::OK);
    call(&app2, "POST", &format!("/sessions/{partial}/tasks/2/choice"), Some(json!({"profile_index": 1}))).await;
    let records = read_log(&dir.path().join(EVENTS_FILE)).unwrap();
    assert_eq!(records.len(), reopened.events().len());
    assert_eq!(records.last().unwrap().kind, "choice_recorded");
}

#[tokio::test]
async fn session_created_logs_the_display_order() {
    let (app, svc, _) = memory_app();
    create(&app).await;
    let record = &svc.events()[0];
    assert_eq!(record.kind, "session_created");
    let order = record.payload["attribute_display_order"].as_array().unwrap();
    assert_eq!(order.len(), 9);
    assert_eq!(order[0], "Party Affiliation");
    assert!(record.payload["seed"].as_str().unwrap().parse::<u64>().is_ok());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_sessions_replay_to_the_same_export() {
    let (app, svc, _) = memory_app();
    let mut handles = Vec::new();
    for i in 0..24 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = create(&app).await;
            for n in 1..=10 {
                tokio::task::yield_now().await;
                let (s, _) = call(&app, "POST", &format!("/sessions/{id}/tasks/{n}/choice"), Some(json!({"profile_index": 1 + (n + i) % 2}))).await;
                assert_eq!(s, StatusCode::OK);
            }
            if i % 6 != 5 {
                let (s, _) = call(&app, "POST", &format!("/sessions/{id}/questionnaire"), Some(json!({"answers": answers()}))).await;
                assert_eq!(s, StatusCode::OK);
            }
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
    let export = svc.export_csv().unwrap();
    let replayed = SurveyService::replay(svc.design().clone(), &svc.events(), ServiceConfig::default()).unwrap();
    assert_eq!(replayed.export_csv().unwrap(), export);
    assert_eq!(replayed.sessions(), svc.sessions());
    let ds = ChoiceDataset::ingest_csv(&export, svc.design().clone()).unwrap();
    assert_eq!(ds.n_respondents(), 20);
    assert_eq!(ds.n_rows(), 400);
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let (app, _, _) = memory_app();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://survey.example")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[test]
fn corrupt_log_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(EVENTS_FILE), "{\"seq\":2,\"kind\":\"session_created\",\"timestamp\":\"2020-01-01T00:00:00Z\",\"payload\":{}}\n").unwrap();
    let err = SurveyService::open(Arc::new(DesignSpec::bundled()), dir.path(), ServiceConfig::default()).err().unwrap();
    assert!(matches!(err, conjoint_service::ServiceError::CorruptLog { line: 1, .. }));
}

mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{oracle_truth, small_workspace, FIXED_TIME};
use sts_core::agents::AgentRef;
use sts_core::judging::{Outcome, ReferenceEpisode};
use sts_core::service::{router, AppState};
use sts_core::workspace::Workspace;

struct Api {
    _dir: tempfile::TempDir,
    ws: Workspace,
}

impl Api {
    fn new(roster: &[AgentRef]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = small_workspace(dir.path(), roster);
        Api { _dir: dir, ws }
    }

    fn app(&self) -> axum::Router {
        let state = AppState::load(self.ws.clone())
            .unwrap()
            .with_clock(Arc::new(|| FIXED_TIME.to_string()));
        router(Arc::new(state))
    }

    async fn call(&self, app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    async fn get(&self, app: &axum::Router, uri: &str) -> (StatusCode, Value) {
        self.call(app, "GET", uri, None).await
    }

    async fn post(&self, app: &axum::Router, body: Value) -> (StatusCode, Value) {
        self.call(app, "POST", "/api/annotations", Some(body.to_string())).await
    }
}

fn annotation(id: &str, outcome: &str, tick: u64, annotator: &str) -> Value {
    json!({"continuation_id": id, "outcome": outcome, "marker_tick": tick, "annotator_id": annotator})
}

#[tokio::test]
async fn health_reports_ok() {
    let api = Api::new(&[AgentRef::oracle()]);
    let app = api.app();
    assert_eq!(api.get(&app, "/api/health").await, (StatusCode::OK, json!({"status": "ok"})));
}

#[tokio::test]
async fn pending_needs_an_annotator_and_lists_unjudged_work() {
    let api = Api::new(&[AgentRef::oracle()]);
    let app = api.app();
    let (status, body) = api.get(&app, "/api/pending").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");
    let (status, _) = api.get(&app, "/api/pending?annotator=").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = api.get(&app, "/api/pending?annotator=alice").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<String> = serde_json::from_value(body).unwrap();
    let index = api.ws.load_index().unwrap();
    assert_eq!(ids.len(), index.continuations.len());

    // Annotating one removes it from everyone's queue.
    let e = &index.continuations[0];
    let (status, _) = api.post(&app, annotation(&e.continuation_id, "failure", e.takeover_tick, "bob")).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, body) = api.get(&app, "/api/pending?annotator=alice").await;
    let after: Vec<String> = serde_json::from_value(body).unwrap();
    assert_eq!(after.len(), ids.len() - 1);
    assert!(!after.contains(&e.continuation_id));
}

#[tokio::test]
async fn metadata_hides_the_agent() {
    let api = Api::new(&[AgentRef::oracle()]);
    let app = api.app();
    let e = api.ws.load_index().unwrap().continuations[0].clone();
    let (status, body) = api.get(&app, &format!("/api/continuations/{}", e.continuation_id)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["continuation_id"], e.continuation_id);
    assert_eq!(body["scenario_id"], e.scenario_id);
    assert_eq!(body["takeover_tick"], e.takeover_tick);
    assert_eq!(body["frame_count"], e.length);
    assert_eq!(body["context_start"], 0);
    assert!(body["instruction_text"].as_str().is_some_and(|t| !t.is_empty()));
    assert!(body["category"].is_string());
    assert!(body.get("agent_name").is_none());
    let text = body.to_string();
    assert!(!text.contains("oracle"), "{text}");

    let (status, body) = api.get(&app, "/api/continuations/missing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
}

#[tokio::test]
async fn frames_are_paged_and_validated() {
    let api = Api::new(&[AgentRef::oracle()]);
    let app = api.app();
    let e = api.ws.load_index().unwrap().continuations[0].clone();
    let base = format!("/api/continuations/{}/frames", e.continuation_id);

    let (status, all) = api.get(&app, &base).await;
    assert_eq!(status, StatusCode::OK);
    let all = all.as_array().unwrap().clone();
    assert_eq!(all.len() as u64, e.length);
    for (t, f) in all.iter().enumerate() {
        assert_eq!(f["tick"], t as u64);
        assert_eq!(f["context"], (t as u64) < e.takeover_tick);
        assert_eq!(f["takeover"], t as u64 == e.takeover_tick);
        assert_eq!(f["cells"].as_array().unwrap().len() as u64, f["width"].as_u64().unwrap() * f["height"].as_u64().unwrap());
    }

    let (status, page) = api.get(&app, &format!("{base}?from=5&to=9")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page.as_array().unwrap(), &all[5..=9]);

    // `to` past the end is clamped.
    let (status, tail) = api.get(&app, &format!("{base}?from={}&to=100000", e.length - 2)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tail.as_array().unwrap().len(), 2);

    let (status, body) = api.get(&app, &format!("{base}?from=9&to=5")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("after"));
    let (status, _) = api.get(&app, &format!("{base}?from=abc")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api.get(&app, "/api/continuations/missing/frames").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn posting_annotations_covers_every_status() {
    let api = Api::new(&[AgentRef::oracle()]);
    let app = api.app();
    let e = api.ws.load_index().unwrap().continuations[0].clone();
    let id = e.continuation_id.as_str();
    let ok = annotation(id, "success", e.takeover_tick + 3, "alice");

    let (status, body) = api.post(&app, ok.clone()).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["created_at"], FIXED_TIME);
    assert_eq!(body["marker_tick"], e.takeover_tick + 3);

    let (status, again) = api.post(&app, ok).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, body);

    let (status, conflict) = api.post(&app, annotation(id, "failure", e.takeover_tick + 3, "alice")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["error"], "conflict");
    assert_eq!(conflict["existing"]["outcome"], "success");

    let (status, oob) = api.post(&app, annotation(id, "failure", e.takeover_tick - 1, "bob")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(oob["error"], "out_of_range");
    assert_eq!(oob["lo"], e.takeover_tick);
    assert_eq!(oob["hi"], e.length - 1);
    let (status, _) = api.post(&app, annotation(id, "failure", e.length, "bob")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, empty) = api.post(&app, annotation(id, "failure", e.takeover_tick, "  ")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(empty["error"], "empty_annotator");

    let (status, unknown) = api.post(&app, annotation("nope", "failure", 1, "bob")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(unknown["error"], "unknown_continuation");

    for bad in [
        "{".to_string(),
        json!({"continuation_id": id, "outcome": "maybe", "marker_tick": 1, "annotator_id": "x"}).to_string(),
        json!({"continuation_id": id, "outcome": "success", "annotator_id": "x"}).to_string(),
        json!({"continuation_id": id, "outcome": "success", "marker_tick": 1, "annotator_id": "x", "extra": 1}).to_string(),
        json!({"continuation_id": id, "outcome": "success", "marker_tick": -4, "annotator_id": "x"}).to_string(),
    ] {
        let (status, body) = api.call(&app, "POST", "/api/annotations", Some(bad.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(body["error"], "bad_request");
    }

    // Only the first accepted record reached the file.
    let text = std::fs::read_to_string(api.ws.annotations_path()).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[tokio::test]
async fn reports_follow_annotations() {
    let api = Api::new(&[AgentRef::oracle(), AgentRef::random()]);
    let app = api.app();
    let (status, body) = api.get(&app, "/api/reports/oracle").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "unannotated");

    let truth = oracle_truth(&api.ws);
    for a in &truth {
        let outcome = if a.outcome == Outcome::Success { "success" } else { "failure" };
        let (status, _) = api.post(&app, annotation(&a.continuation_id, outcome, a.marker_tick, "alice")).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let index = api.ws.load_index().unwrap();
    let expected = |agent: &str| {
        let mine: Vec<_> = index.continuations.iter().filter(|e| e.agent_name == agent).collect();
        let wins = mine
            .iter()
            .filter(|e| truth.iter().any(|a| a.continuation_id == e.continuation_id && a.outcome == Outcome::Success))
            .count();
        (wins as f64 / mine.len() as f64, mine.len())
    };
    for agent in ["oracle", "random"] {
        let (status, body) = api.get(&app, &format!("/api/reports/{agent}")).await;
        assert_eq!(status, StatusCode::OK);
        let (score, n) = expected(agent);
        assert_eq!(body["agent_name"], agent);
        assert_eq!(body["suite_version_filter"], "v1");
        assert_eq!(body["overall"]["n"], n);
        assert!((body["overall"]["score"].as_f64().unwrap() - score).abs() < 1e-12);
    }
    let (status, body) = api.get(&app, "/api/reports/oracle?version=v1&suite=sts").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["agent_name"], "oracle");

    let (status, _) = api.get(&app, "/api/reports/ghost").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = api.get(&app, "/api/reports/oracle?suite=other").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    // Version filters are cumulative, so v7 still covers the v1 scenarios.
    let (status, _) = api.get(&app, "/api/reports/oracle?version=v7").await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = api.get(&app, "/api/reports/oracle?version=nosuchtag").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "no_continuations");
    let (status, _) = api.get(&app, "/api/reports/oracle?version=Bad%20Tag").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn annotator_accuracy_against_references() {
    let api = Api::new(&[AgentRef::oracle(), AgentRef::random()]);
    let truth = oracle_truth(&api.ws);
    api.ws
        .save_references(&truth.iter().map(ReferenceEpisode::from_annotation).collect::<Vec<_>>())
        .unwrap();
    let app = api.app();
    let (status, _) = api.get(&app, "/api/annotators/alice/accuracy").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // Alice labels everything "failure": perfect on failures, zero on
    // successes.
    for a in &truth {
        api.post(&app, annotation(&a.continuation_id, "failure", a.marker_tick, "alice")).await;
    }
    let (status, body) = api.get(&app, "/api/annotators/alice/accuracy").await;
    assert_eq!(status, StatusCode::OK);
    let succ = truth.iter().filter(|a| a.outcome == Outcome::Success).count() as u64;
    let fail = truth.len() as u64 - succ;
    assert_eq!(body["n"], truth.len());
    assert_eq!(body["confusion"]["fn"], succ);
    assert_eq!(body["confusion"]["tn"], fail);
    let expected = if succ > 0 && fail > 0 { 0.5 } else if fail > 0 { 1.0 } else { 0.0 };
    assert!((body["balanced_accuracy"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[tokio::test]
async fn references_are_interleaved_into_pending() {
    let api = Api::new(&[AgentRef::oracle(), AgentRef::random(), AgentRef::noisy(0.5), AgentRef::no_vision()]);
    let truth = oracle_truth(&api.ws);
    let refs: Vec<_> = truth.iter().take(3).map(ReferenceEpisode::from_annotation).collect();
    api.ws.save_references(&refs).unwrap();
    let app = api.app();
    let (_, body) = api.get(&app, "/api/pending?annotator=carol").await;
    let queue: Vec<String> = serde_json::from_value(body).unwrap();
    let ordinary = truth.len() - 3;
    let ref_ids: Vec<&str> = refs.iter().map(|r| r.continuation_id.as_str()).collect();
    let placed = queue.iter().filter(|id| ref_ids.contains(&id.as_str())).count();
    // About one reference per nine ordinary items.
    assert_eq!(placed, (ordinary as f64 / 9.0).floor().min(3.0) as usize);
    assert_eq!(queue.len(), ordinary + placed);
    let (_, again) = api.get(&app, "/api/pending?annotator=carol").await;
    assert_eq!(serde_json::from_value::<Vec<String>>(again).unwrap(), queue);
}

#[tokio::test]
async fn unknown_routes_are_404() {
    let api = Api::new(&[AgentRef::oracle()]);
    let app = api.app();
    let (status, _) = api.get(&app, "/api/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use tower::ServiceExt;

use common::FIXED_TIME;
use sts_core::service::{router, AppState};
use sts_core::workspace::Workspace;

fn sts(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sts"))
        .args(args)
        .env("STS_WORKSPACE", ws)
        .env("STS_FIXED_TIME", FIXED_TIME)
        .output()
        .unwrap()
}

#[track_caller]
fn ok(ws: &Path, args: &[&str]) -> String {
    let out = sts(ws, args);
    assert!(
        out.status.success(),
        "sts {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[track_caller]
fn fails(ws: &Path, args: &[&str], code: i32) -> String {
    let out = sts(ws, args);
    assert_eq!(out.status.code(), Some(code), "sts {args:?}");
    String::from_utf8(out.stderr).unwrap()
}

/// A small ladder pipeline up to, but not including, judging.
fn pipeline(ws: &Path) {
    ok(ws, &["init"]);
    ok(ws, &["record", "--count", "2", "--length", "200"]);
    ok(ws, &["curate", "--per-category", "1", "--continuation-length", "60"]);
    ok(ws, &["continue", "--agents", "ladder", "--n", "1"]);
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(dir.path(), &["frobnicate"], 2);
    assert!(err.contains("Usage"));
    fails(dir.path(), &["judge"], 2);
    fails(dir.path(), &["curate", "--per-category", "1", "--from-outcomes", "4"], 2);
    fails(dir.path(), &["judge", "--simulate", "flip=nope"], 2);
}

#[test]
fn operational_errors_are_one_line_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(dir.path(), &["rank"], 1);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: workspace: "), "{err}");

    ok(dir.path(), &["init"]);
    let err = fails(dir.path(), &["continue", "--suite", "missing"], 1);
    assert_eq!(err.trim(), "error: workspace: unknown suite \"missing\"");
    let err = fails(dir.path(), &["continue", "--agents", "wizard"], 1);
    assert!(err.starts_with("error: "), "{err}");
    let err = fails(dir.path(), &["continue", "--n", "0"], 1);
    assert!(err.contains("--n"), "{err}");
    let err = fails(dir.path(), &["init", "--reference-rate", "1.5"], 1);
    assert!(err.contains("reference_rate"), "{err}");
    // The failed init left the original config in place.
    assert!(Workspace::open(dir.path()).is_ok());
}

#[test]
fn oracle_pipeline_ranks_the_ladder_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    pipeline(ws);
    let index = Workspace::open(ws).unwrap().load_index().unwrap();
    let total = index.continuations.len();
    assert_eq!(total, 8 * 8);

    assert_eq!(ok(ws, &["judge", "--export-pending"]).trim(), format!("{total} pending"));
    let err = fails(ws, &["rank"], 1);
    assert!(err.starts_with("error: workspace: "), "{err}");

    ok(ws, &["judge", "--oracle"]);
    assert_eq!(ok(ws, &["judge", "--oracle"]).trim(), format!("0 annotations added ({total} total)"));
    assert_eq!(ok(ws, &["judge", "--export-pending"]).trim(), "0 pending");

    let table = ok(ws, &["rank"]);
    let reports = ws.join("reports");
    for f in ["rank.txt", "rank.csv", "rank.json"] {
        assert!(reports.join(f).exists(), "{f}");
    }
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 8);
    let rank: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(reports.join("rank.json")).unwrap()).unwrap();
    let scores: Vec<f64> = rank["rows"].as_array().unwrap().iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(rank["rows"][0]["agent_name"], "noisy_0.00");

    let snapshot = |name: &str| std::fs::read(reports.join(name)).unwrap();
    let before: Vec<_> = ["rank.txt", "rank.csv", "rank.json", "noisy_0.30.json"].map(snapshot).to_vec();
    ok(ws, &["rank"]);
    let after: Vec<_> = ["rank.txt", "rank.csv", "rank.json", "noisy_0.30.json"].map(snapshot).to_vec();
    assert_eq!(before, after);
}

#[test]
fn simulated_annotators_and_references() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    pipeline(ws);
    assert_eq!(ok(ws, &["judge", "--references", "6", "--seed", "4"]).trim(), "6 reference episodes");
    let refs = Workspace::open(ws).unwrap().load_references().unwrap();
    assert_eq!(refs.len(), 6);
    fails(ws, &["judge", "--references", "1000"], 1);

    let out = ok(ws, &["judge", "--simulate", "flip=0.2,jitter=2", "--seed", "9"]);
    assert!(out.starts_with("64 annotations added"), "{out}");
    let text = std::fs::read_to_string(ws.join("annotations/annotations.jsonl")).unwrap();
    assert!(text.lines().all(|l| l.contains("\"annotator_id\":\"sim:flip=0.2,strict=0,jitter=2\"")));

    // Every continuation is annotated now, so only references are queued
    // for a fresh annotator.
    assert_eq!(ok(ws, &["judge", "--export-pending"]).trim(), "0 pending");
    assert_eq!(ok(ws, &["judge", "--export-pending", "--annotator", "dana"]).trim(), "6 pending");
    let pending: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(ws.join("annotations/pending.json")).unwrap()).unwrap();
    assert_eq!(pending.len(), 6);
}

#[test]
fn cli_and_http_ingestion_write_identical_records() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    let index = Workspace::open(a.path()).unwrap().load_index().unwrap();
    let payloads: Vec<String> = index
        .continuations
        .iter()
        .take(5)
        .enumerate()
        .map(|(i, e)| {
            let outcome = if i % 2 == 0 { "success" } else { "failure" };
            format!(
                r#"{{"continuation_id":"{}","outcome":"{outcome}","marker_tick":{},"annotator_id":"erin"}}"#,
                e.continuation_id,
                e.takeover_tick + i as u64
            )
        })
        .collect();
    let file = a.path().join("batch.jsonl");
    std::fs::write(&file, payloads.join("\n")).unwrap();
    assert_eq!(ok(a.path(), &["judge", "--ingest", file.to_str().unwrap()]).trim(), "ingested 5 new, 0 already present");
    assert_eq!(ok(a.path(), &["judge", "--ingest", file.to_str().unwrap()]).trim(), "ingested 0 new, 5 already present");

    let state = AppState::load(Workspace::open(b.path()).unwrap())
        .unwrap()
        .with_clock(Arc::new(|| FIXED_TIME.to_string()));
    let app = router(Arc::new(state));
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    for p in &payloads {
        let req = Request::post("/api/annotations")
            .header("content-type", "application/json")
            .body(Body::from(p.clone()))
            .unwrap();
        let resp = rt.block_on(app.clone().oneshot(req)).unwrap();
        assert_eq!(resp.status(), StatusCode::CREATED);
    }
    let cli = std::fs::read(a.path().join("annotations/annotations.jsonl")).unwrap();
    let http = std::fs::read(b.path().join("annotations/annotations.jsonl")).unwrap();
    assert_eq!(cli, http);

    // A bad line stops ingestion with a single-line error naming it.
    std::fs::write(&file, "{\"continuation_id\":\"x\"}\n").unwrap();
    let err = fails(a.path(), &["judge", "--ingest", file.to_str().unwrap()], 1);
    assert!(err.starts_with("error: parse: ") && err.contains("batch.jsonl:1"), "{err}");
}

#[test]
fn curate_from_outcomes_and_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    ok(ws, &["init"]);
    ok(ws, &["record", "--count", "2", "--length", "200"]);
    let out = ok(ws, &["curate", "--from-outcomes", "6", "--fail-weight", "0.3", "--continuation-length", "60"]);
    assert_eq!(out.trim(), "suite sts with 6 scenarios");
    ok(ws, &["continue", "--agents", "oracle,noisy:0.5,random,no_vision", "--n", "1"]);
    ok(ws, &["judge", "--oracle"]);
    let out = ok(ws, &["correlate"]);
    assert!(out.starts_with("agent,sts,interactive,logprob,probes\n"), "{out}");
    let corr: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(ws.join("reports/correlations.json")).unwrap()).unwrap();
    assert_eq!(corr.len(), 6);
    assert!(ws.join("reports/metrics.csv").exists());
    let err = fails(ws, &["correlate", "--agents", "oracle,random"], 1);
    assert!(err.starts_with("error: proxy: "), "{err}");
}

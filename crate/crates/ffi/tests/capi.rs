use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use sts_core::agents::AgentRef;
use sts_core::continuation::{generate_all, PreparedScenario};
use sts_core::judging::oracle_judge;
use sts_core::record::{record_corpus, CorpusSpec};
use sts_core::suite::{curate_by_category, default_registry, CurationOptions};
use sts_core::workspace::Workspace;
use sts_ffi::*;

/// A workspace with a tiny oracle-judged suite. Returns the id of one
/// continuation and its takeover tick.
fn fixture(root: &Path) -> (String, u64) {
    let ws = Workspace::init(root).unwrap();
    let corpus = record_corpus(&CorpusSpec {
        per_category: 2,
        length: 200,
        ..CorpusSpec::default()
    })
    .unwrap();
    let opts = CurationOptions {
        continuation_length: 60,
        ..CurationOptions::default()
    };
    let suite = curate_by_category(&corpus, &default_registry(), 1, &opts).unwrap();
    for e in &corpus {
        ws.save_episode(e).unwrap();
    }
    ws.save_suite(&suite).unwrap();
    let prepared: Vec<_> = suite
        .scenarios
        .iter()
        .map(|s| {
            let src = corpus.iter().find(|e| e.episode_id == s.episode_id).unwrap().clone();
            PreparedScenario::new(s.clone(), Arc::new(src)).unwrap()
        })
        .collect();
    let cs = generate_all(&prepared, &[AgentRef::oracle()], 1, 0).unwrap();
    ws.save_continuations(&cs).unwrap();
    let first = &cs[0];
    (first.continuation_id.clone(), first.takeover_tick)
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = sts_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { sts_string_free(p) };
    s
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(sts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected_with_a_message() {
    let mut ws: *mut StsWorkspace = ptr::null_mut();
    assert_eq!(unsafe { sts_workspace_open(ptr::null(), &mut ws) }, StsStatus::NullArgument);
    assert!(last_error().contains("path"));
    assert!(ws.is_null());
    let p = cstr("/nonexistent");
    assert_eq!(unsafe { sts_workspace_open(p.as_ptr(), ptr::null_mut()) }, StsStatus::NullArgument);
    unsafe {
        sts_workspace_free(ptr::null_mut());
        sts_episode_free(ptr::null_mut());
        sts_string_free(ptr::null_mut());
    }
}

#[test]
fn opening_an_uninitialised_directory_fails_with_io() {
    let dir = tempfile::tempdir().unwrap();
    let p = cstr(dir.path().to_str().unwrap());
    let mut ws: *mut StsWorkspace = ptr::null_mut();
    assert_eq!(unsafe { sts_workspace_open(p.as_ptr(), &mut ws) }, StsStatus::Io);
    assert!(last_error().contains("not an initialised workspace"));
}

#[test]
fn invalid_utf8_is_reported() {
    let bad = [0xffu8, 0xfe, 0];
    let mut ws: *mut StsWorkspace = ptr::null_mut();
    assert_eq!(
        unsafe { sts_workspace_open(bad.as_ptr().cast(), &mut ws) },
        StsStatus::InvalidUtf8
    );
}

#[test]
fn annotation_round_trip_through_the_c_api() {
    let dir = tempfile::tempdir().unwrap();
    let (id, takeover) = fixture(dir.path());
    let root = cstr(dir.path().to_str().unwrap());
    let mut ws: *mut StsWorkspace = ptr::null_mut();
    assert_eq!(unsafe { sts_workspace_open(root.as_ptr(), &mut ws) }, StsStatus::Ok);
    assert!(sts_last_error().is_null());

    let mut count = 0usize;
    assert_eq!(unsafe { sts_workspace_continuation_count(ws, &mut count) }, StsStatus::Ok);
    assert!(count > 0);

    let annotator = cstr("alice");
    let mut out: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { sts_workspace_pending(ws, annotator.as_ptr(), &mut out) }, StsStatus::Ok);
    let pending: Vec<String> = serde_json::from_str(&unsafe { take_string(out) }).unwrap();
    assert_eq!(pending.len(), count);

    let body = |tick: u64, outcome: &str| {
        cstr(&format!(
            r#"{{"continuation_id":"{id}","outcome":"{outcome}","marker_tick":{tick},"annotator_id":"alice"}}"#
        ))
    };
    let mut created = -1;
    assert_eq!(unsafe { sts_workspace_ingest(ws, body(takeover, "success").as_ptr(), &mut created) }, StsStatus::Ok);
    assert_eq!(created, 1);
    assert_eq!(unsafe { sts_workspace_ingest(ws, body(takeover, "success").as_ptr(), &mut created) }, StsStatus::Ok);
    assert_eq!(created, 0);
    assert_eq!(
        unsafe { sts_workspace_ingest(ws, body(takeover, "failure").as_ptr(), ptr::null_mut()) },
        StsStatus::Conflict
    );
    assert_eq!(
        unsafe { sts_workspace_ingest(ws, body(takeover - 1, "failure").as_ptr(), ptr::null_mut()) },
        StsStatus::OutOfRange
    );
    assert!(last_error().contains("outside"));
    let unknown = cstr(r#"{"continuation_id":"nope","outcome":"success","marker_tick":1,"annotator_id":"a"}"#);
    assert_eq!(unsafe { sts_workspace_ingest(ws, unknown.as_ptr(), ptr::null_mut()) }, StsStatus::NotFound);
    let garbage = cstr("{not json");
    assert_eq!(unsafe { sts_workspace_ingest(ws, garbage.as_ptr(), ptr::null_mut()) }, StsStatus::InvalidArgument);

    // Only one continuation is annotated, so the report is refused.
    let (suite, agent) = (cstr("sts"), cstr("oracle"));
    assert_eq!(
        unsafe { sts_workspace_report(ws, suite.as_ptr(), agent.as_ptr(), ptr::null(), &mut out) },
        if count == 1 { StsStatus::Ok } else { StsStatus::InvalidArgument }
    );
    let ghost = cstr("ghost");
    assert_eq!(
        unsafe { sts_workspace_report(ws, suite.as_ptr(), ghost.as_ptr(), ptr::null(), &mut out) },
        StsStatus::NotFound
    );
    unsafe { sts_workspace_free(ws) };
}

#[test]
fn report_is_json_once_everything_is_judged() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let ws_rs = Workspace::open(dir.path()).unwrap();
    let store = ws_rs.open_store().unwrap();
    let scenarios = ws_rs.scenarios().unwrap();
    for e in ws_rs.load_index().unwrap().continuations {
        let s = &scenarios[&e.scenario_id];
        let ep = ws_rs.load_continuation_episode(&e).unwrap();
        let a = oracle_judge(&e.continuation_id, &ep, e.takeover_tick, &s.category, &s.instruction_text, "t").unwrap();
        store.ingest(a, Some(e.bounds())).unwrap();
    }
    drop(store);

    let root = cstr(dir.path().to_str().unwrap());
    let mut ws: *mut StsWorkspace = ptr::null_mut();
    assert_eq!(unsafe { sts_workspace_open(root.as_ptr(), &mut ws) }, StsStatus::Ok);
    let (suite, agent, version) = (cstr("sts"), cstr("oracle"), cstr("v1"));
    let mut out: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe { sts_workspace_report(ws, suite.as_ptr(), agent.as_ptr(), version.as_ptr(), &mut out) },
        StsStatus::Ok
    );
    let report: serde_json::Value = serde_json::from_str(&unsafe { take_string(out) }).unwrap();
    assert_eq!(report["agent_name"], "oracle");
    // Sixty ticks is not always enough to finish, so only the shape is fixed.
    let score = report["overall"]["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(report["overall"]["n"], ws_rs.load_index().unwrap().continuations.len());
    unsafe { sts_workspace_free(ws) };
}

#[test]
fn episode_handles_load_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let ws = Workspace::open(dir.path()).unwrap();
    let entry = ws.load_index().unwrap().continuations[0].clone();
    let path = dir.path().join(&entry.path);
    let p = cstr(path.to_str().unwrap());
    let mut ep: *mut StsEpisode = ptr::null_mut();
    assert_eq!(unsafe { sts_episode_load(p.as_ptr(), &mut ep) }, StsStatus::Ok);
    let mut len = 0u64;
    assert_eq!(unsafe { sts_episode_length(ep, &mut len) }, StsStatus::Ok);
    assert_eq!(len, entry.length);
    let mut id: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { sts_episode_id(ep, &mut id) }, StsStatus::Ok);
    assert_eq!(unsafe { take_string(id) }, entry.continuation_id);
    assert_eq!(unsafe { sts_episode_verify(ep) }, StsStatus::Ok);
    unsafe { sts_episode_free(ep) };

    // Flip a byte in the body: the checksum catches it on load.
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x55;
    std::fs::write(&path, bytes).unwrap();
    assert_eq!(unsafe { sts_episode_load(p.as_ptr(), &mut ep) }, StsStatus::Corrupt);
    let missing = cstr(dir.path().join("missing.stse").to_str().unwrap());
    assert_eq!(unsafe { sts_episode_load(missing.as_ptr(), &mut ep) }, StsStatus::NotFound);
}

#[test]
fn statistics_entry_points() {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
    let ys = [5.0, 6.0, 7.0, 8.0, 7.5];
    let (mut r, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { sts_spearman(xs.as_ptr(), ys.as_ptr(), 5, &mut r, &mut p) }, StsStatus::Ok);
    assert!((r - 0.9).abs() < 1e-12);
    assert!((p - 0.083_333_333_333_333_33).abs() < 1e-12, "p = {p}");
    assert_eq!(
        unsafe { sts_spearman(xs.as_ptr(), ys.as_ptr(), 2, &mut r, &mut p) },
        StsStatus::InvalidArgument
    );
    assert_eq!(unsafe { sts_spearman(ptr::null(), ys.as_ptr(), 5, &mut r, &mut p) }, StsStatus::NullArgument);

    let mut ba = 0.0;
    assert_eq!(unsafe { sts_balanced_accuracy(9, 1, 2, 8, &mut ba) }, StsStatus::Ok);
    assert!((ba - 0.85).abs() < 1e-12);
    assert_eq!(unsafe { sts_balanced_accuracy(0, 0, 2, 8, &mut ba) }, StsStatus::Ok);
    assert!((ba - 0.8).abs() < 1e-12);
    assert_eq!(unsafe { sts_balanced_accuracy(0, 0, 0, 0, &mut ba) }, StsStatus::InvalidArgument);
}

#[test]
fn errors_are_per_thread() {
    let mut ws: *mut StsWorkspace = ptr::null_mut();
    assert_eq!(unsafe { sts_workspace_open(ptr::null(), &mut ws) }, StsStatus::NullArgument);
    std::thread::spawn(|| assert!(sts_last_error().is_null())).join().unwrap();
    assert!(!sts_last_error().is_null());
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sts.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "sts_last_error",
        "sts_version",
        "sts_string_free",
        "sts_workspace_init",
        "sts_workspace_open",
        "sts_workspace_free",
        "sts_workspace_continuation_count",
        "sts_workspace_pending",
        "sts_workspace_ingest",
        "sts_workspace_report",
        "sts_episode_load",
        "sts_episode_free",
        "sts_episode_length",
        "sts_episode_id",
        "sts_episode_verify",
        "sts_spearman",
        "sts_balanced_accuracy",
    ] {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(text.contains("typedef struct StsWorkspace StsWorkspace;"));
    assert!(text.contains("STS_STATUS_CONFLICT = 6"));
    // Syntax-check with the system C compiler when one is installed.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

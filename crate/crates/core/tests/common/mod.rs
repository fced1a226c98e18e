//! Small on-disk workspaces shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use sts_core::agents::AgentRef;
use sts_core::continuation::{generate_all, PreparedScenario};
use sts_core::judging::{oracle_judge, Annotation};
use sts_core::record::{record_corpus, CorpusSpec};
use sts_core::suite::{curate_by_category, default_registry, CurationOptions};
use sts_core::workspace::Workspace;

pub const FIXED_TIME: &str = "2026-01-01T00:00:00Z";

/// Records two short episodes per category, curates one scenario per
/// category with 60-tick continuations and generates one continuation
/// each for `roster`. Nothing is annotated.
pub fn small_workspace(root: &Path, roster: &[AgentRef]) -> Workspace {
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
    let cs = generate_all(&prepared, roster, 1, 0).unwrap();
    ws.save_continuations(&cs).unwrap();
    ws
}

/// Oracle annotations for every continuation in the workspace index.
pub fn oracle_truth(ws: &Workspace) -> Vec<Annotation> {
    let scenarios = ws.scenarios().unwrap();
    ws.load_index()
        .unwrap()
        .continuations
        .iter()
        .map(|e| {
            let s = &scenarios[&e.scenario_id];
            let ep = ws.load_continuation_episode(e).unwrap();
            oracle_judge(&e.continuation_id, &ep, e.takeover_tick, &s.category, &s.instruction_text, FIXED_TIME).unwrap()
        })
        .collect()
}

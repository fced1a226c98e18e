use super::*;
use crate::record::{record_corpus, CorpusSpec};

fn small_opts() -> CurationOptions {
    CurationOptions {
        continuation_length: 60,
        ..CurationOptions::default()
    }
}

fn corpus(per_category: u32, categories: Vec<Category>) -> Vec<Episode> {
    record_corpus(&CorpusSpec {
        categories,
        per_category,
        length: 100,
        seed: 3,
        ..CorpusSpec::default()
    })
    .unwrap()
}

#[test]
fn curates_per_category_with_takeover_after_prompt() {
    let corpus = corpus(4, Category::ALL.to_vec());
    let suite = curate_by_category(&corpus, &default_registry(), 3, &small_opts()).unwrap();
    assert_eq!(suite.scenarios.len(), 24);
    for s in &suite.scenarios {
        let e = corpus.iter().find(|e| e.episode_id == s.episode_id).unwrap();
        let p = find_prompt(e).unwrap();
        assert!(s.takeover_tick > p.said_tick);
        assert_eq!(s.takeover_tick, p.said_tick + 1);
        assert!(s.takeover_tick > 0 && s.takeover_tick < e.len());
        assert_eq!(s.instruction_text, p.text);
        assert!(s.tags.contains(&"v1".to_string()) && s.tags.contains(&s.category));
    }
    let again = curate_by_category(&corpus, &default_registry(), 3, &small_opts()).unwrap();
    assert_eq!(suite, again);
}

#[test]
fn missing_category_is_named() {
    let corpus = corpus(2, vec![Category::Lift]);
    let registry: Vec<CategoryEntry> = default_registry().into_iter().take(2).collect();
    let err = curate_by_category(&corpus, &registry, 2, &small_opts()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("touch_with") && !msg.contains("category lift"), "{msg}");
    assert!(matches!(curate_by_category(&corpus, &registry, 0, &small_opts()), Err(SuiteError::PerCategory)));
}

#[test]
fn training_episodes_are_never_curated() {
    let mut corpus = corpus(2, vec![Category::Lift]);
    corpus[0].metadata.training = true;
    let registry: Vec<CategoryEntry> = default_registry().into_iter().take(1).collect();
    let suite = curate_by_category(&corpus, &registry, 1, &small_opts()).unwrap();
    assert_eq!(suite.scenarios[0].episode_id, corpus[1].episode_id);
    assert!(curate_by_category(&corpus, &registry, 2, &small_opts()).is_err());
}

#[test]
fn outcome_curation_splits_buckets() {
    let corpus = corpus(5, vec![Category::Lift, Category::ColorOf]);
    let judged: Vec<(Episode, Outcome)> = corpus
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), if i % 2 == 0 { Outcome::Failure } else { Outcome::Success }))
        .collect();
    let fail_ids: BTreeSet<String> = judged
        .iter()
        .filter(|(_, o)| *o == Outcome::Failure)
        .map(|(e, _)| format!("s-{}", e.episode_id))
        .collect();
    let all_fail = curate_from_outcomes(&judged, 1.0, 4, 9, &small_opts()).unwrap();
    assert!(all_fail.scenarios.iter().all(|s| fail_ids.contains(&s.scenario_id)));
    let half = curate_from_outcomes(&judged, 0.5, 8, 9, &small_opts()).unwrap();
    assert_eq!(half.scenarios.iter().filter(|s| fail_ids.contains(&s.scenario_id)).count(), 4);
    assert_eq!(half, curate_from_outcomes(&judged, 0.5, 8, 9, &small_opts()).unwrap());
    assert!(matches!(
        curate_from_outcomes(&judged, 1.0, 6, 9, &small_opts()),
        Err(SuiteError::BucketExhausted { need_fail: 6, have_fail: 5, .. })
    ));
    assert!(matches!(curate_from_outcomes(&judged, 1.5, 6, 9, &small_opts()), Err(SuiteError::FailWeight(_))));
}

#[test]
fn extend_then_filter_recovers_original() {
    let corpus = corpus(4, vec![Category::Lift, Category::CountShape]);
    let registry: Vec<CategoryEntry> = default_registry();
    let reg2: Vec<CategoryEntry> = registry
        .iter()
        .filter(|c| c.name == "lift" || c.name == "count_shape")
        .cloned()
        .collect();
    let v1 = curate_by_category(&corpus[..], &reg2, 2, &small_opts()).unwrap();
    let used: BTreeSet<&str> = v1.scenarios.iter().map(|s| s.episode_id.as_str()).collect();
    let delta: Vec<Scenario> = corpus
        .iter()
        .filter(|e| !used.contains(e.episode_id.as_str()))
        .filter_map(|e| scenario_for(e, 60, 1))
        .collect();
    assert!(!delta.is_empty());
    let v2 = extend(&v1, delta.clone(), 2).unwrap();
    assert_eq!(v2.scenarios.len(), v1.scenarios.len() + delta.len());
    assert_eq!(filter(&v2, "v1").unwrap(), v1);
    assert!(filter(&v2, "v2").unwrap().scenarios.len() == v2.scenarios.len());
    let lifts = filter(&v2, "lift").unwrap();
    assert!(!lifts.scenarios.is_empty() && lifts.scenarios.iter().all(|s| s.category == "lift"));

    assert!(matches!(extend(&v2, delta, 3), Err(SuiteError::DuplicateScenario(_))));
    assert!(matches!(extend(&v1, vec![], 1), Err(SuiteError::VersionNotIncreasing { .. })));
    assert!(matches!(filter(&v1, "Bad Tag"), Err(SuiteError::TagSyntax(_))));
}

#[test]
fn manifest_roundtrip_and_key_order() {
    let corpus = corpus(1, vec![Category::Lift]);
    let registry: Vec<CategoryEntry> = default_registry().into_iter().take(1).collect();
    let suite = curate_by_category(&corpus, &registry, 1, &small_opts()).unwrap();
    let text = to_manifest(&suite);
    assert_eq!(from_manifest(&text).unwrap(), suite);
    let order = ["\"suite_id\"", "\"version\"", "\"categories\"", "\"scenarios\""];
    let pos: Vec<usize> = order.iter().map(|k| text.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    let keys = [
        "\"scenario_id\"",
        "\"episode_id\"",
        "\"takeover_tick\"",
        "\"continuation_length\"",
        "\"category\"",
        "\"tags\"",
        "\"instruction_text\"",
        "\"difficulty_hint\"",
    ];
    let body = &text[text.find("\"scenarios\"").unwrap()..];
    let pos: Vec<usize> = keys.iter().map(|k| body.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suites/s.json");
    save_suite(&suite, &path).unwrap();
    assert_eq!(load_suite(&path).unwrap(), suite);
}

#[test]
fn tag_syntax() {
    for ok in ["v1", "v12", "lift", "hard", "a_b2"] {
        assert!(validate_tag(ok).is_ok(), "{ok}");
    }
    for bad in ["", "V1", "v1x2-", "1a", "with space", "lift-2"] {
        assert!(validate_tag(bad).is_err(), "{bad}");
    }
}

use super::*;
use crate::agents::AgentRef;
use crate::record::{record, SetterPolicy};
use crate::sim::{Action, ActionKind, Avatar, Facing, Object, Pos, Role, WorldConfig, WorldState};
use crate::suite::find_prompt;
use crate::task::Category;

fn obj(id: u32, color: &str, shape: &str, x: i32, y: i32) -> Object {
    Object {
        id,
        shape: shape.into(),
        color: color.into(),
        pos: Pos::new(x, y),
        carried_by: None,
    }
}

/// 7x5 open room; solver at (3, 2) facing east.
fn world(objects: Vec<Object>) -> WorldState {
    WorldState {
        config: WorldConfig {
            grid_width: 7,
            grid_height: 5,
            room_count: 1,
            object_count: objects.len() as u32,
            ..WorldConfig::default()
        },
        tick: 0,
        objects,
        avatars: [
            Avatar {
                role: Role::Setter,
                pos: Pos::new(0, 0),
                facing: Facing::S,
                held: None,
            },
            Avatar {
                role: Role::Solver,
                pos: Pos::new(3, 2),
                facing: Facing::E,
                held: None,
            },
        ],
        events: vec![],
        walls: vec![],
        inbox: [None, None],
    }
}

/// Feeds `actions` to a tracker started on `state` and returns the verdict.
fn run(state: &WorldState, text: &str, actions: &[Action]) -> Option<Verdict> {
    let instr = Instruction::parse(text).unwrap();
    let mut t = PredicateTracker::new(&instr, state, state.tick).unwrap();
    let mut s = state.clone();
    for a in actions {
        let tick = s.tick;
        s.step_in_place(&Action::noop(), a);
        if let Some(v) = t.observe(tick, &s) {
            return Some(v);
        }
    }
    None
}

fn act(k: ActionKind) -> Action {
    Action::of(k)
}

#[test]
fn lift_succeeds_after_five_held_ticks() {
    let s = world(vec![obj(0, "red", "ball", 4, 2)]);
    let mut actions = vec![act(ActionKind::Grasp)];
    actions.extend(vec![Action::noop(); 10]);
    // grasp at tick 0 means held in frames 0..=4
    assert_eq!(
        run(&s, "lift the red ball", &actions),
        Some(Verdict {
            outcome: Outcome::Success,
            tick: LIFT_HOLD_TICKS - 1
        })
    );
    // a release after three ticks restarts the count
    let mut actions = vec![act(ActionKind::Grasp), Action::noop(), Action::noop(), act(ActionKind::Release)];
    actions.push(act(ActionKind::Grasp));
    actions.extend(vec![Action::noop(); 10]);
    assert_eq!(run(&s, "lift the red ball", &actions).unwrap().tick, 4 + 4);
}

#[test]
fn distractor_lift_fails_before_target_succeeds() {
    let s = world(vec![obj(0, "red", "ball", 4, 2), obj(1, "blue", "ball", 2, 2)]);
    let mut actions = vec![
        act(ActionKind::TurnLeft),
        act(ActionKind::TurnLeft),
        act(ActionKind::Grasp),
    ];
    actions.extend(vec![Action::noop(); 10]);
    assert_eq!(
        run(&s, "lift the red ball", &actions),
        Some(Verdict {
            outcome: Outcome::Failure,
            tick: 2
        })
    );
}

#[test]
fn touch_with_tool() {
    let s = world(vec![obj(0, "white", "pillow", 4, 2), obj(1, "red", "candle", 3, 3)]);
    let actions = [act(ActionKind::Grasp), act(ActionKind::TurnRight), act(ActionKind::Grasp)];
    assert_eq!(
        run(&s, "touch the red candle with the white pillow", &actions),
        Some(Verdict {
            outcome: Outcome::Success,
            tick: 2
        })
    );
    // touching with the tool swapped is a failure
    let s = world(vec![obj(0, "red", "candle", 4, 2), obj(1, "white", "pillow", 3, 3)]);
    let v = run(&s, "touch the red candle with the white pillow", &actions).unwrap();
    assert_eq!(v.outcome, Outcome::Failure);
}

#[test]
fn bring_to_requires_release_near_destination() {
    let s = world(vec![obj(0, "red", "ball", 4, 2), obj(1, "blue", "cube", 5, 4)]);
    // carry the ball down one row, then drop it east: lands at (4, 3), adjacent to the cube
    let near = [
        act(ActionKind::Grasp),
        act(ActionKind::TurnRight),
        act(ActionKind::MoveForward),
        act(ActionKind::TurnLeft),
        act(ActionKind::Release),
    ];
    assert_eq!(
        run(&s, "bring the red ball to the blue cube", &near),
        Some(Verdict {
            outcome: Outcome::Success,
            tick: 4
        })
    );
    let far = [act(ActionKind::Grasp), act(ActionKind::TurnLeft), act(ActionKind::Release)];
    assert_eq!(run(&s, "bring the red ball to the blue cube", &far).unwrap().outcome, Outcome::Failure);
}

#[test]
fn arrange_row_detects_collinear_adjacent_objects() {
    let s = world(vec![
        obj(0, "red", "ball", 4, 2),
        obj(1, "blue", "cube", 4, 3),
        obj(2, "green", "book", 6, 0),
    ]);
    let text = "arrange the red ball and the blue cube and the green book in a row";
    assert_eq!(run(&s, text, &[Action::NOOP; 3]), None);
    let mut moved = s.clone();
    moved.objects[2].pos = Pos::new(4, 1);
    assert_eq!(
        run(&moved, text, &[Action::noop()]),
        Some(Verdict {
            outcome: Outcome::Success,
            tick: 0
        })
    );
}

#[test]
fn qa_first_answer_counts() {
    let s = world(vec![obj(0, "red", "ball", 4, 2), obj(1, "red", "cube", 0, 4)]);
    let ok = run(&s, "how many balls", &[Action::noop(), Action::say("1"), Action::say("2")]).unwrap();
    assert_eq!((ok.outcome, ok.tick), (Outcome::Success, 1));
    let bad = run(&s, "is there a blue cube", &[Action::say("Yes")]).unwrap();
    assert_eq!((bad.outcome, bad.tick), (Outcome::Failure, 0));
    let ok = run(&s, "is there a blue cube", &[Action::say(" NO ")]).unwrap();
    assert_eq!(ok.outcome, Outcome::Success);
}

fn recorded(category: Category, solver: AgentRef, seed: u64) -> (Episode, u64, String) {
    let e = record(&WorldConfig::with_seed(seed), &SetterPolicy::prompted(category), &solver, 200, seed).unwrap();
    let p = find_prompt(&e).unwrap();
    (e, p.takeover_tick(), p.text)
}

#[test]
fn oracle_recordings_are_judged_successes() {
    for cat in [Category::Lift, Category::ColorOf, Category::TouchWith] {
        let (e, takeover, text) = recorded(cat, AgentRef::oracle(), 11);
        let v = judge_episode(&e, takeover, &text).unwrap();
        assert_eq!(v.outcome, Outcome::Success, "{cat} {text}");
        assert!(v.tick >= takeover && v.tick < e.len());
    }
}

#[test]
fn idle_solver_times_out_at_last_tick() {
    let (e, takeover, text) = recorded(Category::Lift, AgentRef::no_vision(), 4);
    let v = judge_episode(&e, takeover, &text).unwrap();
    assert_eq!(
        v,
        Verdict {
            outcome: Outcome::Failure,
            tick: e.len() - 1
        }
    );
    assert!(matches!(
        oracle_judge("c", &e, takeover, "dance", &text, ""),
        Err(JudgeError::UnregisteredCategory(_))
    ));
    assert!(matches!(judge_episode(&e, 0, &text), Err(JudgeError::Takeover { .. })));
}

fn ann(id: &str, outcome: Outcome, tick: u64, who: &str) -> Annotation {
    Annotation {
        continuation_id: id.into(),
        outcome,
        marker_tick: tick,
        annotator_id: who.into(),
        created_at: "2026-01-01T00:00:00Z".into(),
    }
}

#[test]
fn simulated_annotator_boundaries() {
    let bounds = MarkerBounds { lo: 10, hi: 50 };
    let truth = ann("c1", Outcome::Success, 20, ORACLE_ANNOTATOR);
    let zero = NoiseParams::default();
    let same = simulate_annotator(&truth, &zero, bounds, 1);
    assert!(same.same_content(&Annotation {
        annotator_id: zero.annotator_id(),
        ..truth.clone()
    }));
    let flip = NoiseParams {
        flip_prob: 1.0,
        ..zero
    };
    for seed in 0..20 {
        assert_eq!(simulate_annotator(&truth, &flip, bounds, seed).outcome, Outcome::Failure);
    }
    let jitter = NoiseParams {
        jitter_ticks: 100,
        ..zero
    };
    for seed in 0..50 {
        assert!(bounds.contains(simulate_annotator(&truth, &jitter, bounds, seed).marker_tick));
    }
    let strict = NoiseParams {
        strictness_prob: 1.0,
        ..zero
    };
    let fail = ann("c2", Outcome::Failure, 20, ORACLE_ANNOTATOR);
    assert_eq!(simulate_annotator(&fail, &strict, bounds, 3).outcome, Outcome::Failure);
    assert_eq!(simulate_annotator(&truth, &strict, bounds, 3).outcome, Outcome::Failure);
}

#[test]
fn noise_params_parse() {
    let p: NoiseParams = "flip=0.1,strict=0.05,jitter=3".parse().unwrap();
    assert_eq!((p.flip_prob, p.strictness_prob, p.jitter_ticks), (0.1, 0.05, 3));
    assert!("flip=2".parse::<NoiseParams>().is_err());
    assert!("wobble=1".parse::<NoiseParams>().is_err());
}

#[test]
fn accuracy_against_references() {
    let refs: Vec<ReferenceEpisode> = (0..20)
        .map(|i| ReferenceEpisode {
            continuation_id: format!("c{i}"),
            true_outcome: if i < 10 { Outcome::Success } else { Outcome::Failure },
            true_marker_tick: 5,
        })
        .collect();
    let perfect: Vec<Annotation> = refs
        .iter()
        .map(|r| ann(&r.continuation_id, r.true_outcome, 5, "alice"))
        .collect();
    assert_eq!(annotator_accuracy("alice", &refs, &perfect).unwrap().balanced_accuracy, 1.0);

    // tp 9, fn 1, tn 8, fp 2
    let mixed: Vec<Annotation> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let wrong = i == 0 || i == 10 || i == 11;
            let o = if wrong { r.true_outcome.inverted() } else { r.true_outcome };
            ann(&r.continuation_id, o, 5, "bob")
        })
        .collect();
    let acc = annotator_accuracy("bob", &refs, &mixed).unwrap();
    assert_eq!(acc.confusion, Confusion::new(9, 1, 2, 8));
    assert!((acc.balanced_accuracy - 0.85).abs() < 1e-12);
    let flipped: Vec<Annotation> = mixed
        .iter()
        .map(|a| Annotation {
            outcome: a.outcome.inverted(),
            ..a.clone()
        })
        .collect();
    let f = annotator_accuracy("bob", &refs, &flipped).unwrap();
    assert!((f.balanced_accuracy - 0.15).abs() < 1e-12);
    assert!(matches!(annotator_accuracy("carol", &refs, &mixed), Err(JudgeError::NoOverlap(_))));
}

#[test]
fn selection_prefers_oracle_then_majority_then_earliest() {
    let anns = vec![
        ann("a", Outcome::Failure, 3, "h1"),
        ann("a", Outcome::Success, 4, ORACLE_ANNOTATOR),
        ann("b", Outcome::Failure, 3, "h1"),
        ann("b", Outcome::Success, 5, "h2"),
        ann("b", Outcome::Success, 6, "h3"),
        ann("c", Outcome::Failure, 7, "h1"),
        ann("c", Outcome::Success, 8, "h2"),
    ];
    let sel = select_annotations(&anns, SelectionPolicy::OracleMajorityEarliest, None);
    assert_eq!(sel["a"].annotator_id, ORACLE_ANNOTATOR);
    assert_eq!(sel["b"].annotator_id, "h2");
    assert_eq!(sel["c"].annotator_id, "h1");
    let humans = select_annotations(&anns, SelectionPolicy::MajorityEarliest, None);
    assert_eq!(humans["a"].annotator_id, "h1");
    let only = select_annotations(&anns, SelectionPolicy::Annotator, Some("h2"));
    assert_eq!(only.len(), 2);
}

#[test]
fn store_validates_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.jsonl");
    let store = AnnotationStore::open(&path).unwrap();
    let b = Some(MarkerBounds { lo: 10, hi: 40 });
    let a = ann("c1", Outcome::Success, 12, "alice");
    assert!(matches!(store.ingest(a.clone(), b), Ok(Ingested::Created(_))));
    assert!(matches!(store.ingest(a.clone(), b), Ok(Ingested::Existing(_))));
    let retimed = Annotation {
        created_at: "later".into(),
        ..a.clone()
    };
    assert!(matches!(store.ingest(retimed, b), Ok(Ingested::Existing(_))));
    let conflicting = Annotation {
        marker_tick: 13,
        ..a.clone()
    };
    assert!(matches!(store.ingest(conflicting, b), Err(IngestError::Conflict { .. })));
    let early = ann("c2", Outcome::Failure, 9, "alice");
    assert_eq!(
        store.ingest(early, b).unwrap_err(),
        IngestError::OutOfRange { tick: 9, lo: 10, hi: 40 }
    );
    assert!(matches!(
        store.ingest(ann("c3", Outcome::Failure, 12, ""), b),
        Err(IngestError::EmptyAnnotator)
    ));
    assert!(matches!(
        store.ingest(ann("zz", Outcome::Failure, 12, "alice"), None),
        Err(IngestError::UnknownContinuation { .. })
    ));
    assert_eq!(store.len(), 1);

    let reopened = AnnotationStore::open(&path).unwrap();
    assert_eq!(reopened.all(), vec![a.clone()]);
    let line = std::fs::read_to_string(&path).unwrap();
    assert_eq!(line.lines().count(), 1);
    assert!(line.starts_with("{\"continuation_id\":\"c1\",\"outcome\":\"success\",\"marker_tick\":12,"));
}

#[test]
fn concurrent_ingestion_keeps_one_row_per_key() {
    let store = std::sync::Arc::new(AnnotationStore::in_memory());
    let b = Some(MarkerBounds { lo: 0, hi: 100 });
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let store = store.clone();
            std::thread::spawn(move || {
                for i in 0..50 {
                    let _ = store.ingest(ann(&format!("c{i}"), Outcome::Success, t, "same"), b);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(store.len(), 50);
}

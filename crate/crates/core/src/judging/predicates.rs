//! Streaming success/failure predicates per category.

use crate::sim::{EventKind, Role, WorldState};
use crate::task::{normalize_answer, Instruction, ObjRef};

use super::{JudgeError, Outcome};

/// Consecutive ticks the target must stay lifted for a lift to count.
pub const LIFT_HOLD_TICKS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub tick: u64,
}

#[derive(Debug, Clone)]
enum Goal {
    Lift { target: u32 },
    TouchWith { target: u32, tool: u32 },
    BringTo { object: u32, destination: u32 },
    ArrangeRow { objects: [u32; 3] },
    Answer { expected: String },
}

/// Tracks one instruction from the tick the solver first sees it. Feed it
/// the state after every subsequent step; it reports the first success, or
/// the first failure if that comes strictly earlier.
#[derive(Debug, Clone)]
pub struct PredicateTracker {
    goal: Goal,
    start: u64,
    seen_events: usize,
    hold_since: Option<u64>,
    verdict: Option<Verdict>,
}

fn resolve(r: &ObjRef, state: &WorldState) -> Result<u32, JudgeError> {
    r.resolve_unique(state)
        .map(|o| o.id)
        .ok_or_else(|| JudgeError::Unresolvable(r.to_string()))
}

impl PredicateTracker {
    /// `state` is the world at tick `start`, before the solver's first
    /// action on the instruction.
    pub fn new(instr: &Instruction, state: &WorldState, start: u64) -> Result<Self, JudgeError> {
        let goal = match instr {
            Instruction::Lift(t) => Goal::Lift {
                target: resolve(t, state)?,
            },
            Instruction::TouchWith { target, tool } => Goal::TouchWith {
                target: resolve(target, state)?,
                tool: resolve(tool, state)?,
            },
            Instruction::BringTo { object, destination } => Goal::BringTo {
                object: resolve(object, state)?,
                destination: resolve(destination, state)?,
            },
            Instruction::ArrangeRow([a, b, c]) => Goal::ArrangeRow {
                objects: [resolve(a, state)?, resolve(b, state)?, resolve(c, state)?],
            },
            qa => Goal::Answer {
                expected: qa
                    .answer(state)
                    .map(|a| normalize_answer(&a))
                    .ok_or_else(|| JudgeError::Unresolvable(qa.to_string()))?,
            },
        };
        let hold_since = match goal {
            Goal::Lift { target } if state.avatar(Role::Solver).held == Some(target) => Some(start),
            _ => None,
        };
        Ok(Self {
            goal,
            start,
            seen_events: state.events.len(),
            hold_since,
            verdict: None,
        })
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.verdict
    }

    /// Consumes the state after step `tick`. Returns the verdict once one
    /// has been reached; later calls keep returning it.
    pub fn observe(&mut self, tick: u64, state: &WorldState) -> Option<Verdict> {
        if self.verdict.is_some() || tick < self.start {
            return self.verdict;
        }
        let new_events = &state.events[self.seen_events.min(state.events.len())..];
        self.seen_events = state.events.len();
        let solver_events = || new_events.iter().filter(|e| e.actor == Role::Solver);
        let lifted_other = |allowed: &[u32]| {
            solver_events().any(|e| e.kind == EventKind::Lifted && !allowed.contains(&e.subject_object().unwrap_or(u32::MAX)))
        };

        let (success, failure) = match &self.goal {
            Goal::Lift { target } => {
                let holding = state.avatar(Role::Solver).held == Some(*target);
                self.hold_since = match (holding, self.hold_since) {
                    (true, Some(s)) => Some(s),
                    (true, None) => Some(tick),
                    (false, _) => None,
                };
                let held_long = self.hold_since.is_some_and(|s| tick + 1 - s >= LIFT_HOLD_TICKS);
                (held_long, lifted_other(&[*target]))
            }
            Goal::TouchWith { target, tool } => {
                let touched = |right: bool| {
                    solver_events().any(|e| {
                        e.kind == EventKind::Touched
                            && ((e.subject_object() == Some(*tool) && e.target == Some(*target)) == right)
                    })
                };
                (touched(true), touched(false) || lifted_other(&[*tool]))
            }
            Goal::BringTo { object, destination } => {
                let dest = state.object(*destination).map(|o| o.pos);
                let released_near = |near: bool| {
                    solver_events().any(|e| {
                        e.kind == EventKind::Released
                            && e.subject_object() == Some(*object)
                            && match (state.object(*object), dest) {
                                (Some(o), Some(d)) => (o.pos.chebyshev(d) <= 1) == near,
                                _ => !near,
                            }
                    })
                };
                (released_near(true), released_near(false) || lifted_other(&[*object]))
            }
            Goal::ArrangeRow { objects } => {
                let cells: Option<Vec<_>> = objects
                    .iter()
                    .map(|id| state.object(*id).filter(|o| o.carried_by.is_none()).map(|o| o.pos))
                    .collect();
                let in_row = cells.is_some_and(|c| crate::plan::is_row([c[0], c[1], c[2]]));
                (in_row, lifted_other(objects))
            }
            Goal::Answer { expected } => match solver_events().find(|e| e.kind == EventKind::Said) {
                Some(e) => {
                    let right = normalize_answer(e.text().unwrap_or_default()) == *expected;
                    (right, !right)
                }
                None => (false, false),
            },
        };
        self.verdict = if success {
            Some(Verdict {
                outcome: Outcome::Success,
                tick,
            })
        } else if failure {
            Some(Verdict {
                outcome: Outcome::Failure,
                tick,
            })
        } else {
            None
        };
        self.verdict
    }
}

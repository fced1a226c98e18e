//! Annotations: the oracle judge, simulated annotators, the annotation
//! store, and annotator accuracy against reference labels.

mod predicates;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{mix, str_seed};
use crate::stats::{balanced_accuracy, Confusion};
use crate::task::Instruction;
use crate::trajectory::{replay_visit, Episode, ReplayError};

pub use predicates::{PredicateTracker, Verdict, LIFT_HOLD_TICKS};
pub use store::{AnnotationStore, IngestError, Ingested};

pub const ORACLE_ANNOTATOR: &str = "oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }

    pub fn inverted(self) -> Outcome {
        match self {
            Outcome::Success => Outcome::Failure,
            Outcome::Failure => Outcome::Success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub continuation_id: String,
    pub outcome: Outcome,
    pub marker_tick: u64,
    pub annotator_id: String,
    pub created_at: String,
}

impl Annotation {
    /// Same judgement, ignoring when it was made.
    pub fn same_content(&self, other: &Annotation) -> bool {
        self.continuation_id == other.continuation_id
            && self.annotator_id == other.annotator_id
            && self.outcome == other.outcome
            && self.marker_tick == other.marker_tick
    }
}

/// An annotation as submitted by a client, before it is timestamped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationInput {
    pub continuation_id: String,
    pub outcome: Outcome,
    pub marker_tick: u64,
    pub annotator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEpisode {
    pub continuation_id: String,
    pub true_outcome: Outcome,
    pub true_marker_tick: u64,
}

impl ReferenceEpisode {
    pub fn from_annotation(a: &Annotation) -> Self {
        Self {
            continuation_id: a.continuation_id.clone(),
            true_outcome: a.outcome,
            true_marker_tick: a.marker_tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("unregistered category {0:?}")]
    UnregisteredCategory(String),
    #[error("instruction {0:?} does not parse")]
    Unparseable(String),
    #[error("cannot resolve {0:?} in the world at takeover")]
    Unresolvable(String),
    #[error("takeover tick {takeover} outside episode of {len} ticks")]
    Takeover { takeover: u64, len: u64 },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("no overlap between annotator {0:?} and the reference set")]
    NoOverlap(String),
    #[error("noise parameter {name} = {value} out of range")]
    Noise { name: &'static str, value: f64 },
}

/// Marker bounds of a continuation: `[takeover_tick, last tick]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerBounds {
    pub lo: u64,
    pub hi: u64,
}

impl MarkerBounds {
    pub fn of(takeover_tick: u64, episode_len: u64) -> Self {
        Self {
            lo: takeover_tick,
            hi: episode_len.saturating_sub(1),
        }
    }

    pub fn contains(&self, tick: u64) -> bool {
        (self.lo..=self.hi).contains(&tick)
    }
}

/// Scans `episode` from `takeover_tick` and places the oracle marker for
/// `instruction_text`. A run with no verdict fails at its last tick.
pub fn judge_episode(episode: &Episode, takeover_tick: u64, instruction_text: &str) -> Result<Verdict, JudgeError> {
    let instr = Instruction::parse(instruction_text).map_err(|_| JudgeError::Unparseable(instruction_text.into()))?;
    let len = episode.len();
    if takeover_tick == 0 || takeover_tick >= len {
        return Err(JudgeError::Takeover {
            takeover: takeover_tick,
            len,
        });
    }
    let mut tracker: Option<PredicateTracker> = None;
    let mut setup_error = None;
    let mut verdict = None;
    // Visit k is the state after k steps; step t's result is state t + 1.
    let mut k = 0u64;
    replay_visit(episode, |state| {
        if k == takeover_tick {
            match PredicateTracker::new(&instr, state, takeover_tick) {
                Ok(t) => tracker = Some(t),
                Err(e) => setup_error = Some(e),
            }
        } else if k > takeover_tick && verdict.is_none() {
            if let Some(t) = tracker.as_mut() {
                verdict = t.observe(k - 1, state);
            }
        }
        k += 1;
    })?;
    if let Some(e) = setup_error {
        return Err(e);
    }
    Ok(verdict.unwrap_or(Verdict {
        outcome: Outcome::Failure,
        tick: len - 1,
    }))
}

/// Oracle annotation for a continuation, category-checked against
/// `category`.
pub fn oracle_judge(
    continuation_id: &str,
    episode: &Episode,
    takeover_tick: u64,
    category: &str,
    instruction_text: &str,
    created_at: &str,
) -> Result<Annotation, JudgeError> {
    let cat = crate::task::Category::from_str(category).map_err(|_| JudgeError::UnregisteredCategory(category.into()))?;
    if let Ok(i) = Instruction::parse(instruction_text) {
        if i.category() != cat {
            return Err(JudgeError::UnregisteredCategory(format!(
                "{category} (instruction is {})",
                i.category()
            )));
        }
    }
    let v = judge_episode(episode, takeover_tick, instruction_text)?;
    Ok(Annotation {
        continuation_id: continuation_id.to_string(),
        outcome: v.outcome,
        marker_tick: v.tick,
        annotator_id: ORACLE_ANNOTATOR.to_string(),
        created_at: created_at.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub flip_prob: f64,
    /// Probability that a true success is marked as a failure.
    pub strictness_prob: f64,
    pub jitter_ticks: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            flip_prob: 0.0,
            strictness_prob: 0.0,
            jitter_ticks: 0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), JudgeError> {
        for (name, value) in [("flip", self.flip_prob), ("strict", self.strictness_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(JudgeError::Noise { name, value });
            }
        }
        Ok(())
    }

    pub fn annotator_id(&self) -> String {
        format!(
            "sim:flip={},strict={},jitter={}",
            self.flip_prob, self.strictness_prob, self.jitter_ticks
        )
    }
}

impl fmt::Display for NoiseParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "flip={},strict={},jitter={}",
            self.flip_prob, self.strictness_prob, self.jitter_ticks
        )
    }
}

impl FromStr for NoiseParams {
    type Err = String;

    /// Parses `flip=0.1,strict=0.05,jitter=3`; omitted keys default to 0.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut p = NoiseParams::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let bad = |e: &dyn fmt::Display| format!("bad value for {k}: {e}");
            match k.trim() {
                "flip" => p.flip_prob = v.trim().parse().map_err(|e| bad(&e))?,
                "strict" => p.strictness_prob = v.trim().parse().map_err(|e| bad(&e))?,
                "jitter" => p.jitter_ticks = v.trim().parse().map_err(|e| bad(&e))?,
                other => return Err(format!("unknown noise key {other:?}")),
            }
        }
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

/// A noisy re-labelling of `truth`. Deterministic per `(seed, continuation)`.
pub fn simulate_annotator(truth: &Annotation, params: &NoiseParams, bounds: MarkerBounds, seed: u64) -> Annotation {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, str_seed(&truth.continuation_id)]));
    let flip = rng.random::<f64>() < params.flip_prob;
    let strict = rng.random::<f64>() < params.strictness_prob;
    let j = params.jitter_ticks as i64;
    let shift = rng.random_range(-j..=j);

    let mut outcome = if flip { truth.outcome.inverted() } else { truth.outcome };
    if strict && truth.outcome.is_success() {
        outcome = Outcome::Failure;
    }
    let tick = (truth.marker_tick as i64 + shift).clamp(bounds.lo as i64, bounds.hi as i64) as u64;
    Annotation {
        continuation_id: truth.continuation_id.clone(),
        outcome,
        marker_tick: tick,
        annotator_id: params.annotator_id(),
        created_at: truth.created_at.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAccuracy {
    pub annotator_id: String,
    pub confusion: Confusion,
    pub balanced_accuracy: f64,
    pub n: u64,
}

/// Scores `annotator_id`'s outcomes against the references they overlap,
/// counting success as the positive class.
pub fn annotator_accuracy(
    annotator_id: &str,
    references: &[ReferenceEpisode],
    annotations: &[Annotation],
) -> Result<AnnotatorAccuracy, JudgeError> {
    let truth: BTreeMap<&str, Outcome> = references
        .iter()
        .map(|r| (r.continuation_id.as_str(), r.true_outcome))
        .collect();
    let mut c = Confusion::default();
    for a in annotations.iter().filter(|a| a.annotator_id == annotator_id) {
        if let Some(t) = truth.get(a.continuation_id.as_str()) {
            c.record(t.is_success(), a.outcome.is_success());
        }
    }
    if c.total() == 0 {
        return Err(JudgeError::NoOverlap(annotator_id.to_string()));
    }
    Ok(AnnotatorAccuracy {
        annotator_id: annotator_id.to_string(),
        balanced_accuracy: balanced_accuracy(&c).unwrap_or(0.0),
        n: c.total(),
        confusion: c,
    })
}

/// Which annotation stands for a continuation when several exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// The oracle if present, else the majority outcome, else the earliest.
    #[default]
    OracleMajorityEarliest,
    /// Ignore the oracle: majority, then earliest.
    MajorityEarliest,
    /// Only annotations by one annotator.
    Annotator,
}

/// Picks one annotation per continuation. Annotations must be in ingestion
/// order; "earliest" refers to that order. With
/// [`SelectionPolicy::Annotator`], only `annotator` is considered.
pub fn select_annotations<'a>(
    annotations: &'a [Annotation],
    policy: SelectionPolicy,
    annotator: Option<&str>,
) -> BTreeMap<&'a str, &'a Annotation> {
    let mut by_cont: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        by_cont.entry(a.continuation_id.as_str()).or_default().push(a);
    }
    let mut out = BTreeMap::new();
    for (id, group) in by_cont {
        let pick = match policy {
            SelectionPolicy::Annotator => group.iter().find(|a| Some(a.annotator_id.as_str()) == annotator).copied(),
            SelectionPolicy::OracleMajorityEarliest => group
                .iter()
                .find(|a| a.annotator_id == ORACLE_ANNOTATOR)
                .copied()
                .or_else(|| majority(&group)),
            SelectionPolicy::MajorityEarliest => {
                let humans: Vec<&Annotation> = group.iter().filter(|a| a.annotator_id != ORACLE_ANNOTATOR).copied().collect();
                majority(&humans)
            }
        };
        if let Some(a) = pick {
            out.insert(id, a);
        }
    }
    out
}

fn majority<'a>(group: &[&'a Annotation]) -> Option<&'a Annotation> {
    let first = group.first()?;
    let successes = group.iter().filter(|a| a.outcome.is_success()).count();
    let failures = group.len() - successes;
    let winner = match successes.cmp(&failures) {
        std::cmp::Ordering::Greater => Outcome::Success,
        std::cmp::Ordering::Less => Outcome::Failure,
        std::cmp::Ordering::Equal => first.outcome,
    };
    group.iter().find(|a| a.outcome == winner).copied()
}

#[cfg(test)]
mod tests;

//! Behavioural continuations: replay a scenario's context with the recorded
//! actions, hand the solver role to an agent at the takeover tick, and
//! record what it does.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentRef};
use crate::codec::Encode;
use crate::judging::MarkerBounds;
use crate::seed::{mix, str_seed};
use crate::sim::{restore, snapshot, Action, ActionKind, Facing, Observation, Pos, Role, SnapshotError, StateBlob, WorldState};
use crate::stats::ScoredContinuation;
use crate::suite::Scenario;
use crate::trajectory::{derive_id, obs_digest, replay_visit, Episode, EpisodeBuilder, EpisodeMetadata, EpisodeSource, ReplayError};

pub const DEFAULT_REPLICATES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContinuationError {
    #[error("scenario {scenario} references episode {expected}, got {found}")]
    EpisodeMismatch {
        scenario: String,
        expected: String,
        found: String,
    },
    #[error("source episode failed verification: {0}")]
    Replay(#[from] ReplayError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("takeover tick {takeover} outside source episode of {len} ticks")]
    Takeover { takeover: u64, len: u64 },
    #[error("replicates must be at least 1")]
    Replicates,
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Continuation {
    pub continuation_id: String,
    pub scenario_id: String,
    pub agent_name: String,
    pub replicate_index: u32,
    pub seed: u64,
    pub takeover_tick: u64,
    pub episode: Episode,
}

impl Continuation {
    pub fn bounds(&self) -> MarkerBounds {
        MarkerBounds::of(self.takeover_tick, self.episode.len())
    }

    pub fn index_entry(&self, path: String) -> IndexEntry {
        IndexEntry {
            continuation_id: self.continuation_id.clone(),
            scenario_id: self.scenario_id.clone(),
            agent_name: self.agent_name.clone(),
            replicate_index: self.replicate_index,
            seed: self.seed,
            takeover_tick: self.takeover_tick,
            length: self.episode.len(),
            path,
        }
    }
}

/// How the world at the takeover tick is reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPath {
    /// Restore a snapshot taken once per scenario.
    #[default]
    Snapshot,
    /// Replay the source episode from the start for every replicate.
    Replay,
}

/// A scenario with its verified source episode and the takeover snapshot.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub source: Arc<Episode>,
    takeover_blob: StateBlob,
    /// Solver observations of the context states, unmasked and masked.
    context: Vec<(Observation, Observation)>,
}

impl PreparedScenario {
    /// Verifies `source` against `scenario` by full replay and captures the
    /// takeover state.
    pub fn new(scenario: Scenario, source: Arc<Episode>) -> Result<Self, ContinuationError> {
        if scenario.episode_id != source.episode_id {
            return Err(ContinuationError::EpisodeMismatch {
                scenario: scenario.scenario_id.clone(),
                expected: scenario.episode_id.clone(),
                found: source.episode_id.clone(),
            });
        }
        let takeover = scenario.takeover_tick;
        if takeover == 0 || takeover >= source.len() {
            return Err(ContinuationError::Takeover {
                takeover,
                len: source.len(),
            });
        }
        let mut context = Vec::with_capacity(takeover as usize);
        let mut blob = None;
        let mut k = 0u64;
        replay_visit(&source, |state| {
            if k < takeover {
                context.push((state.observe(Role::Solver, false), state.observe(Role::Solver, true)));
            } else if k == takeover {
                blob = Some(snapshot(state));
            }
            k += 1;
        })?;
        Ok(Self {
            scenario,
            source,
            takeover_blob: blob.expect("takeover inside episode"),
            context,
        })
    }

    pub fn takeover_state(&self) -> Result<WorldState, SnapshotError> {
        restore(&self.takeover_blob)
    }
}

/// Seed of replicate `i` of `scenario_id` under `base_seed`.
pub fn replicate_seed(base_seed: u64, scenario_id: &str, i: u32) -> u64 {
    mix(&[base_seed, str_seed(scenario_id), i as u64])
}

/// Generates one replicate.
pub fn generate_one(
    prepared: &PreparedScenario,
    agent: &AgentRef,
    replicate: u32,
    base_seed: u64,
    path: ContextPath,
) -> Result<Continuation, ContinuationError> {
    let scenario = &prepared.scenario;
    let source = &prepared.source;
    let takeover = scenario.takeover_tick;
    let seed = replicate_seed(base_seed, &scenario.scenario_id, replicate);
    let masked = agent.vision_masked();
    let mut memory = agent.new_memory(seed);

    let mut state = match path {
        ContextPath::Snapshot => {
            for (full, m) in &prepared.context {
                agent.observe(if masked { m } else { full }, &mut memory);
            }
            prepared.takeover_state()?
        }
        ContextPath::Replay => {
            let mut state = crate::sim::init_world(&source.config).map_err(ReplayError::from)?;
            for step in &source.steps[..takeover as usize] {
                agent.observe(&state.observe(Role::Solver, masked), &mut memory);
                state.step_in_place(&step.setter_action, &step.solver_action);
            }
            state
        }
    };

    let mut builder = EpisodeBuilder::new(source.config.clone(), seed);
    for step in &source.steps[..takeover as usize] {
        builder.push_step(step.clone());
    }
    for _ in 0..scenario.continuation_length {
        let full = state.observe(Role::Solver, false);
        let solver_digest = full.canonical_hash();
        let decision = if masked {
            agent.act(&state.observe(Role::Solver, true), &mut memory)
        } else {
            agent.act(&full, &mut memory)
        };
        let setter_digest = obs_digest(&state, Role::Setter);
        builder.push_digested(&mut state, Action::noop(), decision.action, setter_digest, solver_digest);
    }

    let id = derive_id(&[
        str_seed(&scenario.scenario_id),
        str_seed(&serde_json::to_string(agent).unwrap_or_default()),
        replicate as u64,
        seed,
    ]);
    let mut metadata = EpisodeMetadata::new(EpisodeSource::AgentContinuation);
    metadata.agent_name = Some(agent.name.clone());
    metadata.category = Some(scenario.category.clone());
    metadata.notes = format!("scenario={} replicate={replicate}", scenario.scenario_id);
    Ok(Continuation {
        continuation_id: id.clone(),
        scenario_id: scenario.scenario_id.clone(),
        agent_name: agent.name.clone(),
        replicate_index: replicate,
        seed,
        takeover_tick: takeover,
        episode: builder.finish(id, &state, metadata),
    })
}

/// `n` replicates of `agent` on one scenario.
pub fn generate(
    prepared: &PreparedScenario,
    agent: &AgentRef,
    n: u32,
    base_seed: u64,
) -> Result<Vec<Continuation>, ContinuationError> {
    if n == 0 {
        return Err(ContinuationError::Replicates);
    }
    agent.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| generate_one(prepared, agent, i, base_seed, ContextPath::Snapshot))
        .collect()
}

/// Every (scenario, agent, replicate) combination, ordered scenario-major,
/// then agent, then replicate, regardless of completion order.
pub fn generate_all(
    prepared: &[PreparedScenario],
    agents: &[AgentRef],
    n: u32,
    base_seed: u64,
) -> Result<Vec<Continuation>, ContinuationError> {
    if n == 0 {
        return Err(ContinuationError::Replicates);
    }
    crate::agents::validate_roster(agents)?;
    let jobs: Vec<(usize, usize, u32)> = (0..prepared.len())
        .flat_map(|s| (0..agents.len()).flat_map(move |a| (0..n).map(move |i| (s, a, i))))
        .collect();
    jobs.par_iter()
        .map(|&(s, a, i)| generate_one(&prepared[s], &agents[a], i, base_seed, ContextPath::Snapshot))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FidelityError {
    #[error("context step {tick} differs from the source episode")]
    ContextStep { tick: u64 },
    #[error("continuation has {found} steps, expected {expected}")]
    Length { expected: u64, found: u64 },
    #[error("setter acted at tick {tick} after takeover")]
    SetterActed { tick: u64 },
}

/// Checks that the context prefix is byte-equal to the source and that the
/// setter only no-ops afterwards.
pub fn check_fidelity(c: &Continuation, scenario: &Scenario, source: &Episode) -> Result<(), FidelityError> {
    let expected = scenario.takeover_tick + scenario.continuation_length;
    if c.episode.len() != expected {
        return Err(FidelityError::Length {
            expected,
            found: c.episode.len(),
        });
    }
    for (a, b) in c.episode.steps.iter().zip(&source.steps).take(c.takeover_tick as usize) {
        if a.to_canonical_bytes() != b.to_canonical_bytes() {
            return Err(FidelityError::ContextStep { tick: a.tick });
        }
    }
    for s in &c.episode.steps[c.takeover_tick as usize..] {
        if s.setter_action.kind != ActionKind::Noop || s.setter_action.utterance.is_some() {
            return Err(FidelityError::SetterActed { tick: s.tick });
        }
    }
    Ok(())
}

/// One entry of the continuation index. Paths are workspace-relative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub continuation_id: String,
    pub scenario_id: String,
    pub agent_name: String,
    pub replicate_index: u32,
    pub seed: u64,
    pub takeover_tick: u64,
    pub length: u64,
    pub path: String,
}

impl IndexEntry {
    pub fn scored(&self) -> ScoredContinuation {
        ScoredContinuation {
            continuation_id: self.continuation_id.clone(),
            scenario_id: self.scenario_id.clone(),
            agent_name: self.agent_name.clone(),
            takeover_tick: self.takeover_tick,
        }
    }

    pub fn bounds(&self) -> MarkerBounds {
        MarkerBounds::of(self.takeover_tick, self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContinuationIndex {
    pub continuations: Vec<IndexEntry>,
}

impl ContinuationIndex {
    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.continuations.iter().find(|e| e.continuation_id == id)
    }

    /// Adds or replaces entries, keeping a stable order by
    /// (scenario, agent, replicate).
    pub fn upsert(&mut self, entries: impl IntoIterator<Item = IndexEntry>) {
        for e in entries {
            match self.continuations.iter_mut().find(|x| x.continuation_id == e.continuation_id) {
                Some(slot) => *slot = e,
                None => self.continuations.push(e),
            }
        }
        self.continuations.sort_by(|a, b| {
            (&a.scenario_id, &a.agent_name, a.replicate_index).cmp(&(&b.scenario_id, &b.agent_name, b.replicate_index))
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum FrameCell {
    Floor,
    Wall,
    Object { id: u32, shape: String, color: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAvatar {
    pub role: Role,
    pub pos: Pos,
    pub facing: Facing,
    pub held: Option<FrameHeld>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeld {
    pub id: u32,
    pub shape: String,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameUtterance {
    pub role: Role,
    pub text: String,
}

/// The world at the end of one tick, as shown to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub takeover: bool,
    /// Whether the tick belongs to the replayed context.
    pub context: bool,
    pub width: u32,
    pub height: u32,
    /// Row-major top-down grid; carried objects appear under their avatar.
    pub cells: Vec<FrameCell>,
    pub avatars: Vec<FrameAvatar>,
    /// Utterances spoken during this tick.
    pub utterances: Vec<FrameUtterance>,
}

/// Projects `state` to a frame for tick `tick`.
pub fn project(state: &WorldState, tick: u64, takeover_tick: u64) -> Frame {
    let cfg = &state.config;
    let mut cells = Vec::with_capacity((cfg.grid_width * cfg.grid_height) as usize);
    for y in 0..cfg.grid_height as i32 {
        for x in 0..cfg.grid_width as i32 {
            let p = Pos::new(x, y);
            cells.push(if state.is_wall(p) {
                FrameCell::Wall
            } else if let Some(o) = state.object_at(p) {
                FrameCell::Object {
                    id: o.id,
                    shape: o.shape.clone(),
                    color: o.color.clone(),
                }
            } else {
                FrameCell::Floor
            });
        }
    }
    let avatars = state
        .avatars
        .iter()
        .map(|a| FrameAvatar {
            role: a.role,
            pos: a.pos,
            facing: a.facing,
            held: a.held.and_then(|id| state.object(id)).map(|o| FrameHeld {
                id: o.id,
                shape: o.shape.clone(),
                color: o.color.clone(),
            }),
        })
        .collect();
    let utterances = state
        .events
        .iter()
        .rev()
        .take_while(|e| e.tick >= tick)
        .filter(|e| e.tick == tick && e.kind == crate::sim::EventKind::Said)
        .map(|e| FrameUtterance {
            role: e.actor,
            text: e.text().unwrap_or_default().to_string(),
        })
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    Frame {
        tick,
        takeover: tick == takeover_tick,
        context: tick < takeover_tick,
        width: cfg.grid_width,
        height: cfg.grid_height,
        cells,
        avatars,
        utterances,
    }
}

/// One frame per tick: frame `t` shows the world after step `t`.
pub fn render_frames(episode: &Episode, takeover_tick: u64) -> Result<Vec<Frame>, ReplayError> {
    render_frame_range(episode, takeover_tick, 0, episode.len().saturating_sub(1))
}

/// Frames `from..=to`, clamped to the episode.
pub fn render_frame_range(episode: &Episode, takeover_tick: u64, from: u64, to: u64) -> Result<Vec<Frame>, ReplayError> {
    let mut frames = Vec::new();
    let mut k = 0u64;
    replay_visit(episode, |state| {
        if k > 0 {
            let tick = k - 1;
            if (from..=to).contains(&tick) {
                frames.push(project(state, tick, takeover_tick));
            }
        }
        k += 1;
    })?;
    Ok(frames)
}

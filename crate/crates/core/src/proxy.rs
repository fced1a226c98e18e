//! Comparison metrics: log-probability of held-out behaviour, scripted
//! probe tasks and simulated interactive evaluation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentMemory, AgentRef};
use crate::judging::{PredicateTracker, Verdict};
use crate::record::solver_stream_seed;
use crate::seed::{mix, str_seed};
use crate::sim::{init_world, Action, ConfigError, Role, WorldConfig, WorldState};
use crate::stats::{spearman_named, CorrelationResult, StatsError};
use crate::suite::Suite;
use crate::task::{generate_instruction, Category, Difficulty, Instruction};
use crate::trajectory::{replay_visit, Episode, ReplayError};

pub const DEFAULT_PROBE_EPISODES: u32 = 50;
pub const DEFAULT_PROBE_BUDGET: u64 = 300;
pub const INTERACTIVE_EPISODE_LENGTH: u64 = 600;
pub const INSTRUCTIONS_PER_EPISODE: f64 = 3.5;
/// Ticks an interactive instruction stays open before it counts as failed.
pub const INSTRUCTION_BUDGET: u64 = 100;
pub const DEFAULT_INTERACTIVE_EPISODES: u32 = 50;
pub const MIN_CORRELATION_AGENTS: usize = 4;

/// Attempts at finding a world that admits an instance of a category.
const WORLD_ATTEMPTS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProxyError {
    #[error("held-out episode set is empty")]
    EmptyHeldout,
    #[error("held-out episode {0} is a suite source")]
    HeldoutOverlap(String),
    #[error("no probes registered")]
    NoProbes,
    #[error("probe {name}: category {category} is not instruction following")]
    ProbeCategory { name: String, category: String },
    #[error("n_episodes must be at least 1")]
    NoEpisodes,
    #[error("no world admitted a {0} instruction")]
    NoInstance(String),
    #[error("correlation needs at least {MIN_CORRELATION_AGENTS} agents, got {0}")]
    TooFewAgents(usize),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Mean per-tick log-probability the agent assigns to the recorded solver
/// actions, no-op ticks included. The agent's memory is seeded with the
/// recording's solver stream, so the recording policy itself scores
/// `ln(1 - softening)`.
pub fn mean_log_prob(agent: &AgentRef, heldout: &[Episode]) -> Result<f64, ProxyError> {
    if heldout.is_empty() {
        return Err(ProxyError::EmptyHeldout);
    }
    agent.validate()?;
    let per_episode: Vec<(f64, u64)> = heldout
        .par_iter()
        .map(|ep| {
            let masked = agent.vision_masked();
            let mut memory = agent.new_memory(solver_stream_seed(ep.policy_seed));
            let mut sum = 0.0;
            let mut k = 0usize;
            replay_visit(ep, |state| {
                if let Some(step) = ep.steps.get(k) {
                    let d = agent.act(&state.observe(Role::Solver, masked), &mut memory);
                    sum += d.distribution.log_prob(&step.solver_action);
                }
                k += 1;
            })?;
            Ok((sum, ep.len()))
        })
        .collect::<Result<_, ProxyError>>()?;
    let (sum, n) = per_episode.iter().fold((0.0, 0u64), |(s, n), (a, b)| (s + a, n + b));
    Ok(sum / n as f64)
}

/// Rejects held-out episodes that are sources of `suite` scenarios.
pub fn check_heldout_disjoint(heldout: &[Episode], suite: &Suite) -> Result<(), ProxyError> {
    let sources: BTreeSet<&str> = suite.scenarios.iter().map(|s| s.episode_id.as_str()).collect();
    match heldout.iter().find(|e| sources.contains(e.episode_id.as_str())) {
        Some(e) => Err(ProxyError::HeldoutOverlap(e.episode_id.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTask {
    pub name: String,
    pub category: Category,
    pub generator_seed: u64,
    /// Ticks the solver gets after hearing the instruction.
    pub episode_budget: u64,
    pub episodes: u32,
}

impl ProbeTask {
    pub fn new(category: Category, generator_seed: u64) -> Self {
        Self {
            name: format!("probe_{}", category.name()),
            category,
            generator_seed,
            episode_budget: DEFAULT_PROBE_BUDGET,
            episodes: DEFAULT_PROBE_EPISODES,
        }
    }

    /// Layout seed of probe episode `i`'s `attempt`-th candidate world.
    pub fn world_seed(&self, i: u32, attempt: u64) -> u64 {
        mix(&[self.generator_seed, str_seed(&self.name), i as u64, attempt, 0x960be])
    }
}

/// One probe per instruction-following category.
pub fn default_probes(generator_seed: u64) -> Vec<ProbeTask> {
    Category::ALL
        .iter()
        .filter(|c| c.is_instruction_following())
        .map(|c| ProbeTask::new(*c, generator_seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub name: String,
    pub passed: u32,
    pub episodes: u32,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub agent_name: String,
    pub probes: Vec<ProbeResult>,
    /// Unweighted mean of the per-probe pass rates.
    pub probe_score: f64,
}

/// An agent acting as solver while the caller scripts the setter.
struct Session<'a> {
    agent: &'a AgentRef,
    memory: AgentMemory,
    state: WorldState,
}

impl<'a> Session<'a> {
    fn new(agent: &'a AgentRef, state: WorldState, stream: u64) -> Self {
        Self {
            agent,
            memory: agent.new_memory(stream),
            state,
        }
    }

    fn step(&mut self, setter: &Action) {
        let obs = self.state.observe(Role::Solver, self.agent.vision_masked());
        let d = self.agent.act(&obs, &mut self.memory);
        self.state.step_in_place(setter, &d.action);
    }

    /// Says `instr`, then steps until a verdict or `budget` further ticks.
    fn run_instruction(&mut self, instr: &Instruction, budget: u64) -> Option<Verdict> {
        self.step(&Action::say(instr.to_string()));
        let start = self.state.tick;
        let mut tracker = PredicateTracker::new(instr, &self.state, start).ok()?;
        for _ in 0..budget {
            let tick = self.state.tick;
            self.step(&Action::noop());
            if let Some(v) = tracker.observe(tick, &self.state) {
                return Some(v);
            }
        }
        None
    }
}

/// First world, in attempt order, that admits an instance of `category`.
fn probe_world(probe: &ProbeTask, i: u32) -> Result<(WorldState, Instruction), ProxyError> {
    for attempt in 0..WORLD_ATTEMPTS {
        let state = init_world(&WorldConfig::with_seed(probe.world_seed(i, attempt)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[probe.world_seed(i, attempt), 1]));
        if let Some(instr) = generate_instruction(probe.category, &state, &mut rng) {
            return Ok((state, instr));
        }
    }
    Err(ProxyError::NoInstance(probe.category.name().to_string()))
}

/// Runs every probe on freshly laid-out worlds and scores each episode with
/// the judging predicates.
pub fn run_probes(agent: &AgentRef, probes: &[ProbeTask]) -> Result<ProbeReport, ProxyError> {
    if probes.is_empty() {
        return Err(ProxyError::NoProbes);
    }
    agent.validate()?;
    if let Some(p) = probes.iter().find(|p| !p.category.is_instruction_following()) {
        return Err(ProxyError::ProbeCategory {
            name: p.name.clone(),
            category: p.category.name().to_string(),
        });
    }
    let results = probes
        .iter()
        .map(|probe| {
            let passed = (0..probe.episodes)
                .into_par_iter()
                .map(|i| {
                    let (state, instr) = probe_world(probe, i)?;
                    let mut session = Session::new(agent, state, probe.world_seed(i, u64::MAX));
                    let v = session.run_instruction(&instr, probe.episode_budget);
                    Ok(v.is_some_and(|v| v.outcome.is_success()) as u32)
                })
                .collect::<Result<Vec<u32>, ProxyError>>()?
                .into_iter()
                .sum::<u32>();
            Ok(ProbeResult {
                name: probe.name.clone(),
                passed,
                episodes: probe.episodes,
                pass_rate: if probe.episodes == 0 {
                    0.0
                } else {
                    passed as f64 / probe.episodes as f64
                },
            })
        })
        .collect::<Result<Vec<_>, ProxyError>>()?;
    let probe_score = results.iter().map(|r| r.pass_rate).sum::<f64>() / results.len() as f64;
    Ok(ProbeReport {
        agent_name: agent.name.clone(),
        probes: results,
        probe_score,
    })
}

/// All layout seeds a probe set may use, for disjointness checks.
pub fn probe_world_seeds(probes: &[ProbeTask]) -> BTreeSet<u64> {
    probes
        .iter()
        .flat_map(|p| (0..p.episodes).flat_map(move |i| (0..WORLD_ATTEMPTS).map(move |a| p.world_seed(i, a))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveOptions {
    pub episodes: u32,
    pub seed: u64,
    /// After a failure the setter prefers easy instructions.
    pub drift: bool,
    pub episode_length: u64,
    pub instruction_budget: u64,
}

impl Default for InteractiveOptions {
    fn default() -> Self {
        Self {
            episodes: DEFAULT_INTERACTIVE_EPISODES,
            seed: 0,
            drift: false,
            episode_length: INTERACTIVE_EPISODE_LENGTH,
            instruction_budget: INSTRUCTION_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveReport {
    pub agent_name: String,
    pub episodes: u32,
    pub instructions: u64,
    pub successes: u64,
    pub interactive_score: f64,
    pub mean_instructions: f64,
}

/// The setter's per-tick issue probability. Instructions are only issued
/// while at least one full budget of ticks remains.
fn issue_rate(opts: &InteractiveOptions) -> f64 {
    let window = opts.episode_length.saturating_sub(opts.instruction_budget).max(1);
    (INSTRUCTIONS_PER_EPISODE / window as f64).min(1.0)
}

/// Plays one interactive episode; returns (instructions, successes).
fn interactive_episode(agent: &AgentRef, opts: &InteractiveOptions, index: u32) -> Result<(u64, u64), ProxyError> {
    let ep_seed = mix(&[opts.seed, index as u64, 0x1a7e]);
    let state = init_world(&WorldConfig::with_seed(mix(&[ep_seed, 0])))?;
    // The schedule stream is consumed identically for every agent.
    let mut schedule = ChaCha8Rng::seed_from_u64(mix(&[ep_seed, 1]));
    let mut setter = ChaCha8Rng::seed_from_u64(mix(&[ep_seed, 2]));
    let mut session = Session::new(agent, state, mix(&[ep_seed, 3]));
    let window = opts.episode_length.saturating_sub(opts.instruction_budget);
    let p = issue_rate(opts);

    let mut queued = 0u32;
    let mut open: Option<(PredicateTracker, u64)> = None;
    let mut prefer_easy = false;
    let (mut issued, mut succeeded) = (0u64, 0u64);
    for t in 0..opts.episode_length {
        if t < window && schedule.random_bool(p) {
            queued += 1;
        }
        let mut say = Action::noop();
        let mut pending = None;
        if open.is_none() && queued > 0 && t < window {
            let category = Category::ALL[setter.random_range(0..Category::ALL.len())];
            let tries = if prefer_easy { 8 } else { 1 };
            let mut chosen = None;
            for _ in 0..tries {
                match generate_instruction(category, &session.state, &mut setter) {
                    Some(i) if !prefer_easy || Difficulty::assess(&i, &session.state) == Difficulty::Easy => {
                        chosen = Some(i);
                        break;
                    }
                    Some(i) => chosen = chosen.or(Some(i)),
                    None => {}
                }
            }
            if let Some(instr) = chosen {
                say = Action::say(instr.to_string());
                pending = Some(instr);
                queued -= 1;
            }
        }
        session.step(&say);
        if let Some(instr) = pending {
            // A world that cannot resolve its own instruction is skipped.
            if let Ok(tracker) = PredicateTracker::new(&instr, &session.state, session.state.tick) {
                issued += 1;
                open = Some((tracker, session.state.tick + opts.instruction_budget));
            }
            continue;
        }
        if let Some((tracker, deadline)) = open.as_mut() {
            let verdict = tracker.observe(t, &session.state);
            let success = verdict.is_some_and(|v| v.outcome.is_success());
            if verdict.is_some() || t + 1 >= *deadline {
                succeeded += success as u64;
                prefer_easy = opts.drift && !success;
                open = None;
            }
        }
    }
    Ok((issued, succeeded))
}

/// Online evaluation against a scripted setter that samples categories
/// uniformly and issues instructions at geometric intervals.
pub fn interactive_eval(agent: &AgentRef, opts: &InteractiveOptions) -> Result<InteractiveReport, ProxyError> {
    if opts.episodes == 0 {
        return Err(ProxyError::NoEpisodes);
    }
    agent.validate()?;
    let per_episode = (0..opts.episodes)
        .into_par_iter()
        .map(|i| interactive_episode(agent, opts, i))
        .collect::<Result<Vec<_>, ProxyError>>()?;
    let (instructions, successes) = per_episode.iter().fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(InteractiveReport {
        agent_name: agent.name.clone(),
        episodes: opts.episodes,
        instructions,
        successes,
        interactive_score: if instructions == 0 {
            0.0
        } else {
            successes as f64 / instructions as f64
        },
        mean_instructions: instructions as f64 / opts.episodes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub agent_name: String,
    pub sts_score: f64,
    pub interactive_score: f64,
    pub mean_log_prob: f64,
    pub probe_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

pub const METRIC_NAMES: [&str; 4] = ["sts", "interactive", "logprob", "probes"];

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent,sts,interactive,logprob,probes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.agent_name, r.sts_score, r.interactive_score, r.mean_log_prob, r.probe_score
            ));
        }
        out
    }

    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let get: fn(&MetricRow) -> f64 = match metric {
            "sts" => |r| r.sts_score,
            "interactive" => |r| r.interactive_score,
            "logprob" => |r| r.mean_log_prob,
            "probes" => |r| r.probe_score,
            _ => return None,
        };
        Some(self.rows.iter().map(get).collect())
    }
}

/// Spearman correlation of every metric pair, in [`METRIC_NAMES`] order.
pub fn correlate(table: &MetricTable) -> Result<Vec<CorrelationResult>, ProxyError> {
    if table.rows.len() < MIN_CORRELATION_AGENTS {
        return Err(ProxyError::TooFewAgents(table.rows.len()));
    }
    let mut out = Vec::new();
    for (i, a) in METRIC_NAMES.iter().enumerate() {
        for b in &METRIC_NAMES[i + 1..] {
            let xs = table.column(a).expect("known metric");
            let ys = table.column(b).expect("known metric");
            out.push(spearman_named(a, b, &xs, &ys)?);
        }
    }
    Ok(out)
}

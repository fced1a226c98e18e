//! Scripted solver agents of planted quality.
//!
//! Every agent picks one *chosen* action per tick and executes it. The
//! reported [`ActionDistribution`] softens that choice by `softening`: the
//! chosen action gets `1 - softening` and each other action kind an equal
//! share of the rest. The softening only exists so that log-probabilities
//! of recorded behaviour stay finite.

mod oracle;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::KnownMap;
use crate::seed::mix;
use crate::sim::{Action, ActionKind, CellView, Observation, Pos, DEFAULT_COLORS};
use crate::task::{Instruction, ObjRef};

pub const DEFAULT_SOFTENING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Oracle,
    NoisyOracle,
    Random,
    NoVision,
    QaPrior,
    /// Stand-in for a human solver in recorded corpora: a noisy oracle that
    /// fidgets before it is given an instruction.
    HumanSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Per-instruction probability of pursuing a wrong target or answer.
    pub error_rate: f64,
    pub softening: f64,
    /// Color answered by prior-based agents to "what color is ...".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_color: Option<String>,
    /// Per-tick probability that a human surrogate wanders before it has
    /// been instructed.
    pub fidget_rate: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            error_rate: 0.0,
            softening: DEFAULT_SOFTENING,
            prior_color: None,
            fidget_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("agent {name}: error_rate {value} outside [0, 1]")]
    ErrorRate { name: String, value: f64 },
    #[error("agent {name}: softening {value} outside (0, 1)")]
    Softening { name: String, value: f64 },
    #[error("agent {name}: fidget_rate {value} outside [0, 1]")]
    FidgetRate { name: String, value: f64 },
    #[error("duplicate agent name {0:?} in roster")]
    DuplicateName(String),
    #[error("agent name must be non-empty")]
    EmptyName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRef {
    pub name: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub params: AgentParams,
    #[serde(default)]
    pub seed: u64,
}

impl AgentRef {
    pub fn new(name: impl Into<String>, kind: AgentKind) -> Self {
        Self {
            name: name.into(),
            kind,
            params: AgentParams::default(),
            seed: 0,
        }
    }

    pub fn oracle() -> Self {
        Self::new("oracle", AgentKind::Oracle)
    }

    pub fn noisy(error_rate: f64) -> Self {
        let mut a = Self::new(format!("noisy_{error_rate:.2}"), AgentKind::NoisyOracle);
        a.params.error_rate = error_rate;
        a
    }

    pub fn random() -> Self {
        Self::new("random", AgentKind::Random)
    }

    pub fn no_vision() -> Self {
        Self::new("no_vision", AgentKind::NoVision)
    }

    pub fn qa_prior() -> Self {
        Self::new("qa_prior", AgentKind::QaPrior)
    }

    pub fn human_surrogate(error_rate: f64) -> Self {
        let mut a = Self::new("human", AgentKind::HumanSurrogate);
        a.params.error_rate = error_rate;
        a
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let p = &self.params;
        if self.name.is_empty() {
            return Err(AgentError::EmptyName);
        }
        if !(0.0..=1.0).contains(&p.error_rate) {
            return Err(AgentError::ErrorRate {
                name: self.name.clone(),
                value: p.error_rate,
            });
        }
        if !(p.softening > 0.0 && p.softening < 1.0) {
            return Err(AgentError::Softening {
                name: self.name.clone(),
                value: p.softening,
            });
        }
        if !(0.0..=1.0).contains(&p.fidget_rate) {
            return Err(AgentError::FidgetRate {
                name: self.name.clone(),
                value: p.fidget_rate,
            });
        }
        Ok(())
    }

    /// Whether this agent perceives masked observations.
    pub fn vision_masked(&self) -> bool {
        matches!(self.kind, AgentKind::NoVision | AgentKind::QaPrior)
    }

    fn corrupts(&self) -> bool {
        matches!(self.kind, AgentKind::NoisyOracle | AgentKind::HumanSurrogate)
    }

    /// Fresh memory for one episode. `stream_seed` separates replicates.
    pub fn new_memory(&self, stream_seed: u64) -> AgentMemory {
        AgentMemory {
            rng: ChaCha8Rng::seed_from_u64(mix(&[self.seed, stream_seed])),
            map: KnownMap::unknown(),
            task: None,
            instructed: false,
            unparsed: Vec::new(),
        }
    }

    /// Absorbs an observation without acting (the context period).
    pub fn observe(&self, obs: &Observation, memory: &mut AgentMemory) {
        memory.map.update(obs);
        if let Some(text) = &obs.last_utterance {
            memory.instructed = true;
            match Instruction::parse(text) {
                Ok(instr) => {
                    let corrupted = self.corrupts() && memory.rng.random_bool(self.params.error_rate);
                    memory.task = Some(Task::new(instr, corrupted));
                }
                Err(_) => {
                    memory.unparsed.push(text.clone());
                    memory.task = None;
                }
            }
        }
    }

    /// Observes, then picks this tick's action.
    pub fn act(&self, obs: &Observation, memory: &mut AgentMemory) -> Decision {
        self.observe(obs, memory);
        let chosen = match self.kind {
            AgentKind::Oracle | AgentKind::NoisyOracle => oracle::act(obs, memory),
            AgentKind::HumanSurrogate => {
                if memory.instructed {
                    oracle::act(obs, memory)
                } else {
                    fidget(obs, memory, self.params.fidget_rate)
                }
            }
            AgentKind::Random => random_action(&mut memory.rng),
            AgentKind::NoVision | AgentKind::QaPrior => self.prior_act(obs, memory),
        };
        Decision {
            distribution: ActionDistribution::softened(&chosen, self.params.softening),
            action: chosen,
        }
    }

    /// Functional form of [`AgentRef::act`]: the input memory is untouched.
    pub fn act_pure(&self, obs: &Observation, memory: &AgentMemory) -> (ActionDistribution, Action, AgentMemory) {
        let mut next = memory.clone();
        let d = self.act(obs, &mut next);
        (d.distribution, d.action, next)
    }

    /// Log-probability this agent assigns to `action` given `obs` and
    /// `memory`.
    pub fn action_log_prob(&self, obs: &Observation, memory: &AgentMemory, action: &Action) -> f64 {
        let (dist, _, _) = self.act_pure(obs, memory);
        dist.log_prob(action)
    }

    fn prior_act(&self, obs: &Observation, memory: &mut AgentMemory) -> Action {
        let Some(task) = memory.task.as_mut() else {
            return Action::noop();
        };
        match &task.instr {
            Instruction::Exists(_) | Instruction::ColorOf { .. } | Instruction::Count { .. } | Instruction::Holding => {
                if task.answered {
                    return Action::noop();
                }
                task.answered = true;
                let answer = match &task.instr {
                    Instruction::Exists(_) => "yes".to_string(),
                    Instruction::ColorOf { .. } => self
                        .params
                        .prior_color
                        .clone()
                        .unwrap_or_else(|| DEFAULT_COLORS[0].to_string()),
                    Instruction::Count { .. } => "2".to_string(),
                    _ => held_answer(obs),
                };
                Action::say(answer)
            }
            _ if self.kind == AgentKind::QaPrior => {
                let kinds = [ActionKind::MoveForward, ActionKind::TurnLeft, ActionKind::TurnRight];
                Action::of(*kinds.choose(&mut memory.rng).unwrap())
            }
            _ => Action::noop(),
        }
    }
}

/// Rejects rosters with invalid parameters or duplicate names.
pub fn validate_roster(roster: &[AgentRef]) -> Result<(), AgentError> {
    let mut names = std::collections::BTreeSet::new();
    for a in roster {
        a.validate()?;
        if !names.insert(a.name.as_str()) {
            return Err(AgentError::DuplicateName(a.name.clone()));
        }
    }
    Ok(())
}

/// Parses a comma-separated roster such as `oracle,noisy:0.3,random`.
/// Recognised names are `oracle`, `random`, `no_vision`, `qa_prior` and
/// `noisy:<error_rate>`; `ladder` expands to `noisy:0.0` … `noisy:0.7`.
pub fn parse_roster(text: &str) -> Result<Vec<AgentRef>, String> {
    let mut out = Vec::new();
    for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok {
            "oracle" => out.push(AgentRef::oracle()),
            "random" => out.push(AgentRef::random()),
            "no_vision" => out.push(AgentRef::no_vision()),
            "qa_prior" => out.push(AgentRef::qa_prior()),
            "ladder" => out.extend((0..8).map(|i| AgentRef::noisy(i as f64 / 10.0))),
            _ => match tok.strip_prefix("noisy:") {
                Some(rate) => {
                    let r: f64 = rate.parse().map_err(|e| format!("bad error rate in {tok:?}: {e}"))?;
                    out.push(AgentRef::noisy(r));
                }
                None => return Err(format!("unknown agent {tok:?}")),
            },
        }
    }
    if out.is_empty() {
        return Err("roster is empty".into());
    }
    validate_roster(&out).map_err(|e| e.to_string())?;
    Ok(out)
}

fn held_answer(obs: &Observation) -> String {
    obs.held
        .as_ref()
        .map(|(shape, color)| format!("{color} {shape}"))
        .unwrap_or_else(|| "nothing".to_string())
}

/// Vocabulary the random agent babbles from.
const BABBLE: [&str; 14] = [
    "yes", "no", "red", "blue", "green", "yellow", "pink", "white", "0", "1", "2", "3", "4", "nothing",
];

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    let kind = ActionKind::ALL[rng.random_range(0..ActionKind::ALL.len())];
    if kind == ActionKind::Say {
        Action::say(*BABBLE.choose(rng).unwrap())
    } else {
        Action::of(kind)
    }
}

fn fidget(obs: &Observation, memory: &mut AgentMemory, rate: f64) -> Action {
    let (dx, dy) = obs.facing.delta();
    let facing_object = matches!(obs.cell(dx, dy), Some(CellView::Object { .. }));
    if obs.held.is_none() && facing_object && memory.rng.random_bool(0.2) {
        return Action::of(ActionKind::Grasp);
    }
    if memory.rng.random_bool(rate) {
        let kinds = [ActionKind::MoveForward, ActionKind::TurnLeft, ActionKind::TurnRight];
        Action::of(*kinds.choose(&mut memory.rng).unwrap())
    } else {
        Action::noop()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Task {
    pub instr: Instruction,
    pub corrupted: bool,
    pub substitute: Option<ObjRef>,
    pub wrong_answer: Option<String>,
    pub touched: bool,
    pub answered: bool,
    pub row_slots: Option<[Pos; 3]>,
}

impl Task {
    fn new(instr: Instruction, corrupted: bool) -> Self {
        Self {
            instr,
            corrupted,
            substitute: None,
            wrong_answer: None,
            touched: false,
            answered: false,
            row_slots: None,
        }
    }
}

/// Everything an agent carries between ticks.
#[derive(Debug, Clone)]
pub struct AgentMemory {
    rng: ChaCha8Rng,
    pub(crate) map: KnownMap,
    pub(crate) task: Option<Task>,
    instructed: bool,
    /// Utterances that did not parse as instructions.
    pub unparsed: Vec<String>,
}

impl AgentMemory {
    pub fn current_instruction(&self) -> Option<&Instruction> {
        self.task.as_ref().map(|t| &t.instr)
    }

    /// Whether the current instruction was drawn as an error.
    pub fn corrupted(&self) -> bool {
        self.task.as_ref().is_some_and(|t| t.corrupted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub distribution: ActionDistribution,
    pub action: Action,
}

/// A discrete distribution over actions. A `say` entry without an utterance
/// stands for "some other utterance".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub support: Vec<(Action, f64)>,
}

impl ActionDistribution {
    pub fn softened(chosen: &Action, softening: f64) -> Self {
        let others = (ActionKind::ALL.len() - 1) as f64;
        let mut support = vec![(chosen.clone(), 1.0 - softening)];
        for k in ActionKind::ALL {
            if k != chosen.kind {
                support.push((Action::of(k), softening / others));
            }
        }
        Self { support }
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    pub fn mode(&self) -> &Action {
        &self.support[0].0
    }

    /// Exact match on the chosen action (utterances compared verbatim);
    /// everything else gets the uniform floor.
    pub fn log_prob(&self, action: &Action) -> f64 {
        let (chosen, p) = &self.support[0];
        if chosen == action {
            p.ln()
        } else {
            let floor = self
                .support
                .iter()
                .skip(1)
                .map(|(_, p)| *p)
                .next()
                .unwrap_or(f64::MIN_POSITIVE);
            floor.ln()
        }
    }
}

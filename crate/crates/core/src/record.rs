//! Recording setter/solver language games into episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentRef};
use crate::codec::Encode;
use crate::seed::{mix, str_seed};
use crate::sim::{init_world, Action, ConfigError, Role, WorldConfig};
use crate::task::{generate_instruction, Category};
use crate::trajectory::{derive_id, obs_digest, Episode, EpisodeBuilder, EpisodeMetadata, EpisodeSource};

pub const DEFAULT_EPISODE_LENGTH: u64 = 600;

/// The scripted setter used when recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetterPolicy {
    /// Never speaks.
    Idle,
    /// Issues one instruction of `category` at a tick drawn uniformly from
    /// `[earliest, latest]`, retrying on later ticks if the world offers no
    /// valid instance yet.
    Prompted { category: Category, earliest: u64, latest: u64 },
}

impl SetterPolicy {
    pub fn prompted(category: Category) -> Self {
        SetterPolicy::Prompted {
            category,
            earliest: 10,
            latest: 40,
        }
    }

    fn category(&self) -> Option<Category> {
        match self {
            SetterPolicy::Idle => None,
            SetterPolicy::Prompted { category, .. } => Some(*category),
        }
    }

    fn id_seed(&self) -> u64 {
        match self {
            SetterPolicy::Idle => 0,
            SetterPolicy::Prompted {
                category,
                earliest,
                latest,
            } => mix(&[str_seed(category.name()), *earliest, *latest]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("length ≥ 1 required, got {0}")]
    ZeroLength(u64),
    #[error("invalid world config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("setter window [{earliest}, {latest}] is empty")]
    SetterWindow { earliest: u64, latest: u64 },
}

/// Memory stream seed the recorded solver used for `policy_seed`.
pub fn solver_stream_seed(policy_seed: u64) -> u64 {
    mix(&[policy_seed, 2])
}

/// Runs the setter and solver for `length` ticks. Deterministic given the
/// arguments.
pub fn record(
    config: &WorldConfig,
    setter: &SetterPolicy,
    solver: &AgentRef,
    length: u64,
    policy_seed: u64,
) -> Result<Episode, RecordError> {
    if length == 0 {
        return Err(RecordError::ZeroLength(length));
    }
    solver.validate()?;
    let mut state = init_world(config)?;
    let mut setter_rng = ChaCha8Rng::seed_from_u64(mix(&[policy_seed, 1]));
    let mut memory = solver.new_memory(solver_stream_seed(policy_seed));
    let mut say_at = match setter {
        SetterPolicy::Idle => None,
        SetterPolicy::Prompted { earliest, latest, .. } => {
            if earliest > latest {
                return Err(RecordError::SetterWindow {
                    earliest: *earliest,
                    latest: *latest,
                });
            }
            Some(setter_rng.random_range(*earliest..=*latest))
        }
    };
    let mut builder = EpisodeBuilder::new(config.clone(), policy_seed);
    for t in 0..length {
        let setter_action = match (say_at, setter.category()) {
            (Some(at), Some(category)) if t >= at => match generate_instruction(category, &state, &mut setter_rng) {
                Some(instr) => {
                    say_at = None;
                    Action::say(instr.to_string())
                }
                None => Action::noop(),
            },
            _ => Action::noop(),
        };
        let full = state.observe(Role::Solver, false);
        let solver_digest = full.canonical_hash();
        let decision = if solver.vision_masked() {
            solver.act(&state.observe(Role::Solver, true), &mut memory)
        } else {
            solver.act(&full, &mut memory)
        };
        let setter_digest = obs_digest(&state, Role::Setter);
        builder.push_digested(&mut state, setter_action, decision.action, setter_digest, solver_digest);
    }
    let id = derive_id(&[
        config.canonical_hash(),
        setter.id_seed(),
        str_seed(&serde_json::to_string(solver).unwrap_or_default()),
        length,
        policy_seed,
    ]);
    let mut metadata = EpisodeMetadata::new(EpisodeSource::HumanSurrogate);
    metadata.agent_name = Some(solver.name.clone());
    metadata.category = setter.category().map(|c| c.name().to_string());
    Ok(builder.finish(id, &state, metadata))
}

/// Parameters for recording a corpus of prompted episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub world: WorldConfig,
    pub categories: Vec<Category>,
    pub per_category: u32,
    pub length: u64,
    pub seed: u64,
    pub solver: AgentRef,
    /// Every n-th episode of a category is flagged for training (0 = none).
    pub training_every: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let mut solver = AgentRef::human_surrogate(0.25);
        solver.seed = 7;
        Self {
            world: WorldConfig::default(),
            categories: Category::ALL.to_vec(),
            per_category: 20,
            length: DEFAULT_EPISODE_LENGTH,
            seed: 0,
            solver,
            training_every: 0,
        }
    }
}

/// Records `per_category` episodes for every category, each in a freshly
/// laid-out world. Output order is category-major and independent of
/// thread scheduling.
pub fn record_corpus(spec: &CorpusSpec) -> Result<Vec<Episode>, RecordError> {
    let jobs: Vec<(Category, u32)> = spec
        .categories
        .iter()
        .flat_map(|c| (0..spec.per_category).map(move |i| (*c, i)))
        .collect();
    jobs.par_iter()
        .map(|(category, i)| {
            let job_seed = mix(&[spec.seed, str_seed(category.name()), *i as u64]);
            let mut config = spec.world.clone();
            config.layout_seed = mix(&[job_seed, 0x1a7]);
            let mut e = record(&config, &SetterPolicy::prompted(*category), &spec.solver, spec.length, job_seed)?;
            e.metadata.training = spec.training_every > 0 && (i + 1) % spec.training_every == 0;
            Ok(e)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Encode;
    use crate::sim::EventKind;
    use crate::trajectory::{encode_episode_file, replay};

    #[test]
    fn zero_length_is_rejected() {
        let err = record(&WorldConfig::default(), &SetterPolicy::Idle, &AgentRef::oracle(), 0, 1).unwrap_err();
        assert!(err.to_string().contains("length ≥ 1"));
    }

    #[test]
    fn recording_is_deterministic() {
        let cfg = WorldConfig::with_seed(3);
        let policy = SetterPolicy::prompted(Category::Lift);
        let solver = AgentRef::human_surrogate(0.25);
        let a = record(&cfg, &policy, &solver, 120, 5).unwrap();
        let b = record(&cfg, &policy, &solver, 120, 5).unwrap();
        assert_eq!(encode_episode_file(&a), encode_episode_file(&b));
        let c = record(&cfg, &policy, &solver, 120, 6).unwrap();
        assert_ne!(a.episode_id, c.episode_id);
        assert_eq!(replay(&a).unwrap().last().unwrap().state_hash(), a.final_state_hash);
    }

    #[test]
    fn oracle_lift_episode_contains_a_lift() {
        let mut lifted = 0;
        for seed in 0..5 {
            let cfg = WorldConfig::with_seed(seed);
            let e = record(&cfg, &SetterPolicy::prompted(Category::Lift), &AgentRef::oracle(), 200, seed).unwrap();
            let last = replay(&e).unwrap().pop().unwrap();
            let said = last.events.iter().any(|ev| ev.kind == EventKind::Said && ev.actor == Role::Setter);
            assert!(said);
            if last.events.iter().any(|ev| ev.kind == EventKind::Lifted && ev.actor == Role::Solver) {
                lifted += 1;
            }
        }
        assert_eq!(lifted, 5);
    }

    #[test]
    fn corpus_is_ordered_and_flags_training() {
        let spec = CorpusSpec {
            categories: vec![Category::Lift, Category::ColorOf],
            per_category: 3,
            length: 60,
            training_every: 3,
            ..CorpusSpec::default()
        };
        let corpus = record_corpus(&spec).unwrap();
        assert_eq!(corpus.len(), 6);
        assert_eq!(corpus[0].metadata.category.as_deref(), Some("lift"));
        assert_eq!(corpus[5].metadata.category.as_deref(), Some("color_of"));
        assert_eq!(corpus.iter().filter(|e| e.metadata.training).count(), 2);
        let again = record_corpus(&spec).unwrap();
        assert_eq!(
            corpus.iter().map(|e| e.canonical_hash()).collect::<Vec<_>>(),
            again.iter().map(|e| e.canonical_hash()).collect::<Vec<_>>()
        );
    }
}

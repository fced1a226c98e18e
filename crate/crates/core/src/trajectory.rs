//! Recorded episodes: per-tick actions plus observation digests, persisted in
//! a checksummed binary file and replayable against the simulator.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{hash64, Decode, DecodeError, Encode, Reader, Writer};
use crate::seed::mix;
use crate::sim::{init_world, Action, ConfigError, Role, WorldConfig, WorldState};

pub const EPISODE_MAGIC: [u8; 4] = *b"STSE";
pub const EPISODE_VERSION: u16 = 1;
pub const EPISODE_EXTENSION: &str = "stse";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub tick: u64,
    pub setter_action: Action,
    pub solver_action: Action,
    /// Digest of the unmasked observation each role had before acting.
    pub setter_obs_digest: u64,
    pub solver_obs_digest: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeSource {
    HumanSurrogate,
    AgentContinuation,
    Interactive,
}

impl EpisodeSource {
    fn tag(self) -> u8 {
        match self {
            EpisodeSource::HumanSurrogate => 0,
            EpisodeSource::AgentContinuation => 1,
            EpisodeSource::Interactive => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            0 => EpisodeSource::HumanSurrogate,
            1 => EpisodeSource::AgentContinuation,
            2 => EpisodeSource::Interactive,
            _ => return Err(DecodeError::InvalidTag { what: "episode source", tag }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMetadata {
    pub source: EpisodeSource,
    pub agent_name: Option<String>,
    /// Category of the prompt the setter was asked to issue, if any.
    pub category: Option<String>,
    /// Episodes flagged for training are never curated into a suite.
    pub training: bool,
    pub notes: String,
}

impl EpisodeMetadata {
    pub fn new(source: EpisodeSource) -> Self {
        Self {
            source,
            agent_name: None,
            category: None,
            training: false,
            notes: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub config: WorldConfig,
    pub policy_seed: u64,
    pub steps: Vec<Step>,
    pub final_state_hash: u64,
    pub metadata: EpisodeMetadata,
}

impl Episode {
    pub fn len(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A ULID-formatted id derived from hashed inputs, so re-recording with the
/// same inputs reproduces the id.
pub fn derive_id(parts: &[u64]) -> String {
    let hi = mix(parts);
    let lo = mix(&[hi, parts.len() as u64]);
    let ts = mix(&[lo, hi]) & ((1 << 48) - 1);
    let random = ((hi as u128) << 64 | lo as u128) & ((1u128 << 80) - 1);
    ulid::Ulid::from_parts(ts, random).to_string()
}

/// Digest stored per step for `role`'s unmasked observation of `state`.
pub fn obs_digest(state: &WorldState, role: Role) -> u64 {
    state.observe(role, false).canonical_hash()
}

/// Incrementally builds an episode while a simulation runs.
#[derive(Debug, Clone)]
pub struct EpisodeBuilder {
    config: WorldConfig,
    policy_seed: u64,
    steps: Vec<Step>,
}

impl EpisodeBuilder {
    pub fn new(config: WorldConfig, policy_seed: u64) -> Self {
        Self {
            config,
            policy_seed,
            steps: Vec::new(),
        }
    }

    /// Records one tick and advances `state` by it.
    pub fn push(&mut self, state: &mut WorldState, setter_action: Action, solver_action: Action) {
        self.push_digested(
            state,
            setter_action,
            solver_action,
            obs_digest(state, Role::Setter),
            obs_digest(state, Role::Solver),
        );
    }

    /// Like [`push`](Self::push) with digests the caller already has.
    pub fn push_digested(
        &mut self,
        state: &mut WorldState,
        setter_action: Action,
        solver_action: Action,
        setter_obs_digest: u64,
        solver_obs_digest: u64,
    ) {
        state.step_in_place(&setter_action, &solver_action);
        self.steps.push(Step {
            tick: self.steps.len() as u64,
            setter_action,
            solver_action,
            setter_obs_digest,
            solver_obs_digest,
        });
    }

    /// Appends an already recorded step verbatim.
    pub fn push_step(&mut self, step: Step) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn finish(self, id: String, final_state: &WorldState, metadata: EpisodeMetadata) -> Episode {
        Episode {
            episode_id: id,
            config: self.config,
            policy_seed: self.policy_seed,
            steps: self.steps,
            final_state_hash: final_state.state_hash(),
            metadata,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("episode has no steps")]
    Empty,
    #[error("step {index} carries tick {tick}; ticks must be contiguous from 0")]
    NonContiguous { index: usize, tick: u64 },
    #[error("invalid world config: {0}")]
    Config(#[from] ConfigError),
    #[error("hash mismatch at tick {tick}")]
    HashMismatch { tick: u64 },
}

/// Replays `episode`, calling `visit` on every state from the initial one
/// to the final one, and returns the final state.
pub fn replay_visit(
    episode: &Episode,
    mut visit: impl FnMut(&WorldState),
) -> Result<WorldState, ReplayError> {
    if episode.steps.is_empty() {
        return Err(ReplayError::Empty);
    }
    let mut state = init_world(&episode.config)?;
    visit(&state);
    for (i, step) in episode.steps.iter().enumerate() {
        if step.tick != i as u64 {
            return Err(ReplayError::NonContiguous { index: i, tick: step.tick });
        }
        if obs_digest(&state, Role::Setter) != step.setter_obs_digest
            || obs_digest(&state, Role::Solver) != step.solver_obs_digest
        {
            return Err(ReplayError::HashMismatch { tick: step.tick });
        }
        state.step_in_place(&step.setter_action, &step.solver_action);
        visit(&state);
    }
    if state.state_hash() != episode.final_state_hash {
        return Err(ReplayError::HashMismatch { tick: episode.len() });
    }
    Ok(state)
}

/// The full state sequence: `steps.len() + 1` states, the initial one first.
pub fn replay(episode: &Episode) -> Result<Vec<WorldState>, ReplayError> {
    let mut states = Vec::with_capacity(episode.steps.len() + 1);
    replay_visit(episode, |s| states.push(s.clone()))?;
    Ok(states)
}

/// Replays the first `ticks` steps without checking the final hash and
/// returns the state reached.
pub fn replay_prefix(episode: &Episode, ticks: u64) -> Result<WorldState, ReplayError> {
    if episode.steps.is_empty() {
        return Err(ReplayError::Empty);
    }
    let mut state = init_world(&episode.config)?;
    for (i, step) in episode.steps.iter().take(ticks as usize).enumerate() {
        if step.tick != i as u64 {
            return Err(ReplayError::NonContiguous { index: i, tick: step.tick });
        }
        if obs_digest(&state, Role::Solver) != step.solver_obs_digest {
            return Err(ReplayError::HashMismatch { tick: step.tick });
        }
        state.step_in_place(&step.setter_action, &step.solver_action);
    }
    Ok(state)
}

impl Encode for Step {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.tick);
        self.setter_action.encode(w);
        self.solver_action.encode(w);
        w.u64(self.setter_obs_digest);
        w.u64(self.solver_obs_digest);
    }
}

impl Decode for Step {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Step {
            tick: r.u64()?,
            setter_action: Action::decode(r)?,
            solver_action: Action::decode(r)?,
            setter_obs_digest: r.u64()?,
            solver_obs_digest: r.u64()?,
        })
    }
}

impl Encode for EpisodeMetadata {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.source.tag());
        w.opt(self.agent_name.as_ref(), |w, s| w.str(s));
        w.opt(self.category.as_ref(), |w, s| w.str(s));
        w.bool(self.training);
        w.str(&self.notes);
    }
}

impl Decode for EpisodeMetadata {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(EpisodeMetadata {
            source: EpisodeSource::from_tag(r.u8()?)?,
            agent_name: r.opt(|r| r.string())?,
            category: r.opt(|r| r.string())?,
            training: r.bool()?,
            notes: r.string()?,
        })
    }
}

impl Encode for Episode {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.episode_id);
        self.config.encode(w);
        w.u64(self.policy_seed);
        w.seq(&self.steps);
        w.u64(self.final_state_hash);
        self.metadata.encode(w);
    }
}

impl Decode for Episode {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Episode {
            episode_id: r.string()?,
            config: WorldConfig::decode(r)?,
            policy_seed: r.u64()?,
            steps: r.seq()?,
            final_state_hash: r.u64()?,
            metadata: EpisodeMetadata::decode(r)?,
        })
    }
}

#[derive(Debug, Error)]
pub enum EpisodeFileError {
    #[error("episode file not found: {0}")]
    Missing(PathBuf),
    #[error("bad magic {0:02x?}, expected \"STSE\"")]
    BadMagic(Vec<u8>),
    #[error("unsupported episode format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checksum failure: {0}")]
    Checksum(String),
    #[error("corrupt episode body: {0}")]
    Corrupt(#[from] DecodeError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// The bit-exact file image of an episode.
pub fn encode_episode_file(episode: &Episode) -> Vec<u8> {
    let body = episode.to_canonical_bytes();
    let mut w = Writer::default();
    w.raw(&EPISODE_MAGIC);
    w.u16(EPISODE_VERSION);
    w.u32(body.len() as u32);
    w.raw(&body);
    w.u64(hash64(&body));
    w.into_bytes()
}

pub fn decode_episode_file(bytes: &[u8]) -> Result<Episode, EpisodeFileError> {
    let magic = bytes.get(..4).unwrap_or(bytes);
    if magic != EPISODE_MAGIC {
        return Err(EpisodeFileError::BadMagic(magic.to_vec()));
    }
    let mut r = Reader::new(&bytes[4..]);
    let truncated = |_| EpisodeFileError::Checksum("file truncated".into());
    let version = r.u16().map_err(truncated)?;
    if version != EPISODE_VERSION {
        return Err(EpisodeFileError::VersionMismatch {
            found: version,
            expected: EPISODE_VERSION,
        });
    }
    let body_len = r.u32().map_err(truncated)? as usize;
    if r.remaining() < body_len + 8 {
        return Err(EpisodeFileError::Checksum(format!(
            "file truncated: body of {body_len} bytes plus checksum, {} bytes present",
            r.remaining()
        )));
    }
    let body = r.take(body_len).map_err(truncated)?;
    let stored = r.u64().map_err(truncated)?;
    let actual = hash64(body);
    if stored != actual {
        return Err(EpisodeFileError::Checksum(format!(
            "stored {stored:016x}, computed {actual:016x}"
        )));
    }
    if r.remaining() != 0 {
        return Err(EpisodeFileError::Checksum(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Episode::from_canonical_bytes(body)?)
}

pub fn save_episode(episode: &Episode, path: &Path) -> Result<(), EpisodeFileError> {
    let io_err = |source| EpisodeFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    // Write to a sibling temp file first so readers never see a partial file.
    let tmp = path.with_extension("stse.tmp");
    fs::write(&tmp, encode_episode_file(episode)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_episode(path: &Path) -> Result<Episode, EpisodeFileError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => EpisodeFileError::Missing(path.to_path_buf()),
        _ => EpisodeFileError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    decode_episode_file(&bytes)
}

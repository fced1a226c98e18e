//! MiniPlayhouse: a small deterministic gridworld with a setter and a solver.
//!
//! The world is a value. [`WorldState::step`] is a pure function of the state
//! and the two actions; there is no hidden randomness after [`init_world`].

mod layout;
mod observe;
mod physics;
mod snapshot;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::init_world;
pub use observe::{CellView, Observation, VISION_RADIUS};
pub use snapshot::{restore, snapshot, SnapshotError, StateBlob, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

pub const DEFAULT_SHAPES: [&str; 6] = ["ball", "cube", "candle", "pillow", "plant", "book"];
pub const DEFAULT_COLORS: [&str; 6] = ["red", "blue", "green", "yellow", "pink", "white"];

/// Maximum utterance length in characters.
pub const MAX_UTTERANCE: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("grid dimensions must be at least 5x5, got {0}x{1}")]
    GridTooSmall(u32, u32),
    #[error("room_count must be >= 1 and leave rooms at least 3 cells wide")]
    BadRoomCount,
    #[error("shape and color vocabularies must be non-empty")]
    EmptyVocabulary,
    #[error("insufficient free cells: {objects} objects and 2 avatars need placing, {free} free cells")]
    InsufficientFreeCells { objects: u32, free: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub grid_width: u32,
    pub grid_height: u32,
    pub room_count: u32,
    pub object_count: u32,
    pub shape_vocab: Vec<String>,
    pub color_vocab: Vec<String>,
    pub layout_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grid_width: 11,
            grid_height: 11,
            room_count: 2,
            object_count: 12,
            shape_vocab: DEFAULT_SHAPES.iter().map(|s| s.to_string()).collect(),
            color_vocab: DEFAULT_COLORS.iter().map(|s| s.to_string()).collect(),
            layout_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn with_seed(layout_seed: u64) -> Self {
        Self {
            layout_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid_width < 5 || self.grid_height < 5 {
            return Err(ConfigError::GridTooSmall(self.grid_width, self.grid_height));
        }
        if self.room_count == 0 || self.grid_width / self.room_count < 3 {
            return Err(ConfigError::BadRoomCount);
        }
        if self.shape_vocab.is_empty() || self.color_vocab.is_empty() {
            return Err(ConfigError::EmptyVocabulary);
        }
        Ok(())
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as u32) < self.grid_width && (p.y as u32) < self.grid_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Setter,
    Solver,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::Setter => 0,
            Role::Solver => 1,
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::Setter => Role::Solver,
            Role::Solver => Role::Setter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Setter => "setter",
            Role::Solver => "solver",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cell coordinates. `y` grows southwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, d: Facing) -> Pos {
        let (dx, dy) = d.delta();
        Pos::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, o: Pos) -> i32 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }

    pub fn chebyshev(self, o: Pos) -> i32 {
        (self.x - o.x).abs().max((self.y - o.y).abs())
    }

    pub fn neighbors(self) -> [Pos; 4] {
        Facing::ALL.map(|f| self.offset(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Facing {
    N,
    E,
    S,
    W,
}

impl Facing {
    pub const ALL: [Facing; 4] = [Facing::N, Facing::E, Facing::S, Facing::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Facing::N => (0, -1),
            Facing::E => (1, 0),
            Facing::S => (0, 1),
            Facing::W => (-1, 0),
        }
    }

    pub fn left(self) -> Facing {
        match self {
            Facing::N => Facing::W,
            Facing::W => Facing::S,
            Facing::S => Facing::E,
            Facing::E => Facing::N,
        }
    }

    pub fn right(self) -> Facing {
        match self {
            Facing::N => Facing::E,
            Facing::E => Facing::S,
            Facing::S => Facing::W,
            Facing::W => Facing::N,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Facing::N => 0,
            Facing::E => 1,
            Facing::S => 2,
            Facing::W => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Facing> {
        Facing::ALL.get(i as usize).copied()
    }

    /// The facing that points from `from` to an orthogonally adjacent `to`.
    pub fn between(from: Pos, to: Pos) -> Option<Facing> {
        Facing::ALL.into_iter().find(|f| from.offset(*f) == to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Object {
    pub id: u32,
    pub shape: String,
    pub color: String,
    pub pos: Pos,
    pub carried_by: Option<Role>,
}

impl Object {
    pub fn describe(&self) -> String {
        format!("{} {}", self.color, self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Avatar {
    pub role: Role,
    pub pos: Pos,
    pub facing: Facing,
    pub held: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Noop,
    MoveForward,
    TurnLeft,
    TurnRight,
    Grasp,
    Release,
    Say,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::Noop,
        ActionKind::MoveForward,
        ActionKind::TurnLeft,
        ActionKind::TurnRight,
        ActionKind::Grasp,
        ActionKind::Release,
        ActionKind::Say,
    ];

    pub fn index(self) -> u8 {
        ActionKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn from_index(i: u8) -> Option<ActionKind> {
        ActionKind::ALL.get(i as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance: Option<String>,
}

impl Action {
    pub const NOOP: Action = Action::of(ActionKind::Noop);

    pub const fn of(kind: ActionKind) -> Self {
        Self {
            kind,
            utterance: None,
        }
    }

    pub fn noop() -> Self {
        Self::of(ActionKind::Noop)
    }

    pub fn say(text: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Say,
            utterance: Some(text.into()),
        }
    }

    /// Utterance present iff kind is `say`, and at most [`MAX_UTTERANCE`] chars.
    pub fn is_well_formed(&self) -> bool {
        match (&self.kind, &self.utterance) {
            (ActionKind::Say, Some(t)) => t.chars().count() <= MAX_UTTERANCE,
            (ActionKind::Say, None) => false,
            (_, Some(_)) => false,
            (_, None) => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Lifted,
    Released,
    Touched,
    Said,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSubject {
    Object(u32),
    Text(String),
}

/// One entry of the append-only event log. `tick` is the index of the step
/// that produced it; `actor` is the role whose action caused it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub kind: EventKind,
    pub actor: Role,
    pub subject: EventSubject,
    pub target: Option<u32>,
}

impl Event {
    pub fn subject_object(&self) -> Option<u32> {
        match self.subject {
            EventSubject::Object(id) => Some(id),
            EventSubject::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.subject {
            EventSubject::Text(t) => Some(t),
            EventSubject::Object(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub config: WorldConfig,
    pub tick: u64,
    pub objects: Vec<Object>,
    /// Indexed by [`Role::index`].
    pub avatars: [Avatar; 2],
    pub events: Vec<Event>,
    /// Sorted, deduplicated.
    pub walls: Vec<Pos>,
    /// Utterance spoken to each role during the last step, indexed by the
    /// listener's [`Role::index`].
    pub inbox: [Option<String>; 2],
}

impl WorldState {
    pub fn avatar(&self, role: Role) -> &Avatar {
        &self.avatars[role.index()]
    }

    pub fn object(&self, id: u32) -> Option<&Object> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls.binary_search(&p).is_ok()
    }

    /// The non-carried object resting on `p`, if any.
    pub fn object_at(&self, p: Pos) -> Option<&Object> {
        self.objects
            .iter()
            .find(|o| o.carried_by.is_none() && o.pos == p)
    }

    pub fn avatar_at(&self, p: Pos) -> Option<&Avatar> {
        self.avatars.iter().find(|a| a.pos == p)
    }

    /// In bounds, not a wall, no resting object and no avatar.
    pub fn is_free(&self, p: Pos) -> bool {
        self.config.in_bounds(p)
            && !self.is_wall(p)
            && self.object_at(p).is_none()
            && self.avatar_at(p).is_none()
    }

    pub fn held_object(&self, role: Role) -> Option<&Object> {
        self.avatar(role).held.and_then(|id| self.object(id))
    }

    pub fn faced_cell(&self, role: Role) -> Pos {
        let a = self.avatar(role);
        a.pos.offset(a.facing)
    }

    /// Events emitted by the step with index `tick`.
    pub fn events_at(&self, tick: u64) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.tick == tick)
    }

    /// Hash of the canonical encoding.
    pub fn state_hash(&self) -> u64 {
        use crate::codec::Encode;
        self.canonical_hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(WorldConfig::default().validate().is_ok());
        let small = WorldConfig {
            grid_width: 4,
            ..WorldConfig::default()
        };
        assert_eq!(small.validate(), Err(ConfigError::GridTooSmall(4, 11)));
        let empty = WorldConfig {
            shape_vocab: vec![],
            ..WorldConfig::default()
        };
        assert_eq!(empty.validate(), Err(ConfigError::EmptyVocabulary));
    }

    #[test]
    fn action_well_formedness() {
        assert!(Action::noop().is_well_formed());
        assert!(Action::say("yes").is_well_formed());
        assert!(!Action::say("x".repeat(201)).is_well_formed());
        assert!(!Action::of(ActionKind::Say).is_well_formed());
    }

    #[test]
    fn facing_rotations_compose() {
        for f in Facing::ALL {
            assert_eq!(f.left().right(), f);
            assert_eq!(f.left().left().left().left(), f);
        }
    }
}

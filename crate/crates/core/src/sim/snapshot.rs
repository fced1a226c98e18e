use thiserror::Error;

use super::{
    Action, ActionKind, Avatar, CellView, Event, EventKind, EventSubject, Facing, Object,
    Observation, Pos, Role, WorldConfig, WorldState,
};
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"STSW";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("bad magic: expected STSW, found {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported snapshot format version {found} (expected {SNAPSHOT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("truncated snapshot")]
    Truncated,
    #[error("corrupt snapshot body: {0}")]
    Corrupt(DecodeError),
}

/// Versioned world-state serialization: magic `STSW`, `u16` version, then
/// the canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateBlob(pub Vec<u8>);

impl StateBlob {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

pub fn snapshot(state: &WorldState) -> StateBlob {
    let mut w = Writer::default();
    w.raw(&SNAPSHOT_MAGIC);
    w.u16(SNAPSHOT_VERSION);
    state.encode(&mut w);
    StateBlob(w.into_bytes())
}

pub fn restore(blob: &StateBlob) -> Result<WorldState, SnapshotError> {
    let bytes = blob.as_bytes();
    if bytes.len() < 4 {
        return Err(SnapshotError::Truncated);
    }
    if bytes[..4] != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic(bytes[..4].to_vec()));
    }
    if bytes.len() < 6 {
        return Err(SnapshotError::Truncated);
    }
    let found = u16::from_le_bytes([bytes[4], bytes[5]]);
    if found != SNAPSHOT_VERSION {
        return Err(SnapshotError::UnsupportedVersion { found });
    }
    WorldState::from_canonical_bytes(&bytes[6..]).map_err(|e| match e {
        DecodeError::Truncated { .. } => SnapshotError::Truncated,
        other => SnapshotError::Corrupt(other),
    })
}

impl Encode for Pos {
    fn encode(&self, w: &mut Writer) {
        w.i32(self.x);
        w.i32(self.y);
    }
}

impl Decode for Pos {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Pos::new(r.i32()?, r.i32()?))
    }
}

impl Encode for Role {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.index() as u8);
    }
}

impl Decode for Role {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Role::Setter),
            1 => Ok(Role::Solver),
            tag => Err(DecodeError::InvalidTag { what: "role", tag }),
        }
    }
}

impl Encode for Facing {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.index());
    }
}

impl Decode for Facing {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        Facing::from_index(tag).ok_or(DecodeError::InvalidTag { what: "facing", tag })
    }
}

impl Encode for WorldConfig {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.grid_width);
        w.u32(self.grid_height);
        w.u32(self.room_count);
        w.u32(self.object_count);
        w.seq(&self.shape_vocab);
        w.seq(&self.color_vocab);
        w.u64(self.layout_seed);
    }
}

impl Decode for WorldConfig {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(WorldConfig {
            grid_width: r.u32()?,
            grid_height: r.u32()?,
            room_count: r.u32()?,
            object_count: r.u32()?,
            shape_vocab: r.seq()?,
            color_vocab: r.seq()?,
            layout_seed: r.u64()?,
        })
    }
}

impl Encode for Object {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.id);
        w.str(&self.shape);
        w.str(&self.color);
        self.pos.encode(w);
        w.opt(self.carried_by.as_ref(), |w, r| r.encode(w));
    }
}

impl Decode for Object {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Object {
            id: r.u32()?,
            shape: r.string()?,
            color: r.string()?,
            pos: Pos::decode(r)?,
            carried_by: r.opt(Role::decode)?,
        })
    }
}

impl Encode for Avatar {
    fn encode(&self, w: &mut Writer) {
        self.role.encode(w);
        self.pos.encode(w);
        self.facing.encode(w);
        w.opt(self.held.as_ref(), |w, id| w.u32(*id));
    }
}

impl Decode for Avatar {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Avatar {
            role: Role::decode(r)?,
            pos: Pos::decode(r)?,
            facing: Facing::decode(r)?,
            held: r.opt(|r| r.u32())?,
        })
    }
}

impl Encode for Action {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.kind.index());
        w.opt(self.utterance.as_ref(), |w, t| w.str(t));
    }
}

impl Decode for Action {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        let kind = ActionKind::from_index(tag).ok_or(DecodeError::InvalidTag { what: "action", tag })?;
        Ok(Action {
            kind,
            utterance: r.opt(|r| r.string())?,
        })
    }
}

fn event_kind_tag(k: EventKind) -> u8 {
    match k {
        EventKind::Lifted => 0,
        EventKind::Released => 1,
        EventKind::Touched => 2,
        EventKind::Said => 3,
        EventKind::Blocked => 4,
    }
}

impl Encode for Event {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.tick);
        w.u8(event_kind_tag(self.kind));
        self.actor.encode(w);
        match &self.subject {
            EventSubject::Object(id) => {
                w.u8(0);
                w.u32(*id);
            }
            EventSubject::Text(t) => {
                w.u8(1);
                w.str(t);
            }
        }
        w.opt(self.target.as_ref(), |w, id| w.u32(*id));
    }
}

impl Decode for Event {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tick = r.u64()?;
        let kind = match r.u8()? {
            0 => EventKind::Lifted,
            1 => EventKind::Released,
            2 => EventKind::Touched,
            3 => EventKind::Said,
            4 => EventKind::Blocked,
            tag => return Err(DecodeError::InvalidTag { what: "event", tag }),
        };
        let actor = Role::decode(r)?;
        let subject = match r.u8()? {
            0 => EventSubject::Object(r.u32()?),
            1 => EventSubject::Text(r.string()?),
            tag => return Err(DecodeError::InvalidTag { what: "subject", tag }),
        };
        Ok(Event {
            tick,
            kind,
            actor,
            subject,
            target: r.opt(|r| r.u32())?,
        })
    }
}

impl Encode for WorldState {
    fn encode(&self, w: &mut Writer) {
        self.config.encode(w);
        w.u64(self.tick);
        w.seq(&self.objects);
        self.avatars[0].encode(w);
        self.avatars[1].encode(w);
        w.seq(&self.events);
        w.seq(&self.walls);
        for slot in &self.inbox {
            w.opt(slot.as_ref(), |w, t| w.str(t));
        }
    }
}

impl Decode for WorldState {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let config = WorldConfig::decode(r)?;
        let tick = r.u64()?;
        let objects = r.seq()?;
        let setter = Avatar::decode(r)?;
        let solver = Avatar::decode(r)?;
        if setter.role != Role::Setter || solver.role != Role::Solver {
            return Err(DecodeError::Invalid("avatar roles out of order".into()));
        }
        let events = r.seq()?;
        let walls = r.seq()?;
        let inbox = [r.opt(|r| r.string())?, r.opt(|r| r.string())?];
        Ok(WorldState {
            config,
            tick,
            objects,
            avatars: [setter, solver],
            events,
            walls,
            inbox,
        })
    }
}

impl Encode for CellView {
    fn encode(&self, w: &mut Writer) {
        match self {
            CellView::Unknown => w.u8(0),
            CellView::Opaque => w.u8(1),
            CellView::Wall => w.u8(2),
            CellView::Floor => w.u8(3),
            CellView::Object { shape, color } => {
                w.u8(4);
                w.str(shape);
                w.str(color);
            }
            CellView::Avatar { role } => {
                w.u8(5);
                role.encode(w);
            }
        }
    }
}

impl Encode for Observation {
    fn encode(&self, w: &mut Writer) {
        self.role.encode(w);
        self.pos.encode(w);
        self.facing.encode(w);
        w.seq(&self.local_grid);
        w.opt(self.last_utterance.as_ref(), |w, t| w.str(t));
        w.opt(self.held.as_ref(), |w, (s, c)| {
            w.str(s);
            w.str(c);
        });
        w.bool(self.vision_masked);
    }
}

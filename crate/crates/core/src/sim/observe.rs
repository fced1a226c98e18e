use serde::{Deserialize, Serialize};

use super::{Facing, Pos, Role, WorldState};

/// Half-width of the egocentric patch.
pub const VISION_RADIUS: i32 = 5;

const SIDE: i32 = 2 * VISION_RADIUS + 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "t")]
pub enum CellView {
    /// Vision is masked.
    Unknown,
    /// Outside the grid.
    Opaque,
    Wall,
    Floor,
    Object { shape: String, color: String },
    Avatar { role: Role },
}

/// What one role perceives at a tick.
///
/// The patch is world-aligned: a cell at world offset `(dx, dy)` from the
/// avatar sits at `center + (dx, dy)` whatever the facing. Position, facing
/// and the held object are proprioceptive and survive masking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub role: Role,
    pub pos: Pos,
    pub facing: Facing,
    /// Row-major `(2r+1) x (2r+1)` patch.
    pub local_grid: Vec<CellView>,
    pub last_utterance: Option<String>,
    /// `(shape, color)` of the carried object.
    pub held: Option<(String, String)>,
    pub vision_masked: bool,
}

impl Observation {
    pub fn side() -> i32 {
        SIDE
    }

    /// Cell at world offset `(dx, dy)` from the avatar.
    pub fn cell(&self, dx: i32, dy: i32) -> Option<&CellView> {
        if dx.abs() > VISION_RADIUS || dy.abs() > VISION_RADIUS {
            return None;
        }
        let i = (dy + VISION_RADIUS) * SIDE + (dx + VISION_RADIUS);
        self.local_grid.get(i as usize)
    }

    /// Iterates `(world position, view)` for every patch cell.
    pub fn world_cells(&self) -> impl Iterator<Item = (Pos, &CellView)> {
        let origin = self.pos;
        self.local_grid.iter().enumerate().map(move |(i, c)| {
            let i = i as i32;
            let dx = i % SIDE - VISION_RADIUS;
            let dy = i / SIDE - VISION_RADIUS;
            (Pos::new(origin.x + dx, origin.y + dy), c)
        })
    }
}

impl WorldState {
    pub fn observe(&self, role: Role, vision_masked: bool) -> Observation {
        let me = self.avatar(role);
        let mut local_grid = Vec::with_capacity((SIDE * SIDE) as usize);
        for dy in -VISION_RADIUS..=VISION_RADIUS {
            for dx in -VISION_RADIUS..=VISION_RADIUS {
                let p = Pos::new(me.pos.x + dx, me.pos.y + dy);
                let view = if vision_masked {
                    CellView::Unknown
                } else {
                    self.cell_view(p)
                };
                local_grid.push(view);
            }
        }
        Observation {
            role,
            pos: me.pos,
            facing: me.facing,
            local_grid,
            last_utterance: self.inbox[role.index()].clone(),
            held: self
                .held_object(role)
                .map(|o| (o.shape.clone(), o.color.clone())),
            vision_masked,
        }
    }

    pub fn cell_view(&self, p: Pos) -> CellView {
        if !self.config.in_bounds(p) {
            CellView::Opaque
        } else if self.is_wall(p) {
            CellView::Wall
        } else if let Some(a) = self.avatar_at(p) {
            CellView::Avatar { role: a.role }
        } else if let Some(o) = self.object_at(p) {
            CellView::Object {
                shape: o.shape.clone(),
                color: o.color.clone(),
            }
        } else {
            CellView::Floor
        }
    }
}

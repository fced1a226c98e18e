//! Grid knowledge and shortest-path planning used by the scripted agents and
//! by the instruction generator.

use std::collections::VecDeque;

use crate::sim::{Action, ActionKind, CellView, Facing, Observation, Pos, Role, WorldState};

/// Largest grid an agent is prepared to map before it has seen the borders.
pub const MAX_MAP_SIDE: i32 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapCell {
    Unknown,
    Wall,
    Floor,
    Object { shape: String, color: String },
    Avatar(Role),
}

/// What an agent believes about the grid. Cells outside
/// `[0, width) x [0, height)` are out of bounds; the bounds shrink as soon
/// as the agent sees past a border.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownMap {
    width: i32,
    height: i32,
    stride: i32,
    cells: Vec<MapCell>,
}

impl KnownMap {
    pub fn unknown() -> Self {
        Self {
            width: MAX_MAP_SIDE,
            height: MAX_MAP_SIDE,
            stride: MAX_MAP_SIDE,
            cells: vec![MapCell::Unknown; (MAX_MAP_SIDE * MAX_MAP_SIDE) as usize],
        }
    }

    /// Perfect knowledge of `state`.
    pub fn from_state(state: &WorldState) -> Self {
        let w = state.config.grid_width as i32;
        let h = state.config.grid_height as i32;
        let mut cells = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                cells.push(match state.cell_view(Pos::new(x, y)) {
                    CellView::Wall => MapCell::Wall,
                    CellView::Object { shape, color } => MapCell::Object { shape, color },
                    CellView::Avatar { role } => MapCell::Avatar(role),
                    _ => MapCell::Floor,
                });
            }
        }
        Self {
            width: w,
            height: h,
            stride: w,
            cells,
        }
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    fn idx(&self, p: Pos) -> usize {
        (p.y * self.stride + p.x) as usize
    }

    pub fn get(&self, p: Pos) -> Option<&MapCell> {
        self.in_bounds(p).then(|| &self.cells[self.idx(p)])
    }

    pub fn set(&mut self, p: Pos, c: MapCell) {
        if self.in_bounds(p) {
            let i = self.idx(p);
            self.cells[i] = c;
        }
    }

    pub fn update(&mut self, obs: &Observation) {
        if obs.vision_masked {
            return;
        }
        let me = obs.pos;
        for (p, view) in obs.world_cells() {
            match view {
                CellView::Opaque => {
                    // Seen along the avatar's own row or column, an opaque
                    // cell pins the far border exactly.
                    if p.y == me.y && p.x > me.x {
                        self.width = self.width.min(p.x);
                    }
                    if p.x == me.x && p.y > me.y {
                        self.height = self.height.min(p.y);
                    }
                }
                CellView::Unknown => {}
                CellView::Wall => self.set(p, MapCell::Wall),
                CellView::Floor => self.set(p, MapCell::Floor),
                CellView::Object { shape, color } => self.set(
                    p,
                    MapCell::Object {
                        shape: shape.clone(),
                        color: color.clone(),
                    },
                ),
                CellView::Avatar { role } => self.set(p, MapCell::Avatar(*role)),
            }
        }
    }

    /// Walkable for planning: floor, unexplored, or the planner's own cell.
    pub fn passable(&self, p: Pos, me: Pos) -> bool {
        p == me || matches!(self.get(p), Some(MapCell::Floor | MapCell::Unknown))
    }

    /// Known to be empty floor (candidate for a release).
    pub fn is_floor(&self, p: Pos, me: Pos) -> bool {
        p == me || matches!(self.get(p), Some(MapCell::Floor))
    }

    pub fn find(&self, color: &str, shape: &str) -> Vec<Pos> {
        self.positions()
            .filter(|p| {
                matches!(self.get(*p), Some(MapCell::Object { shape: s, color: c }) if s == shape && c == color)
            })
            .collect()
    }

    pub fn find_shape(&self, shape: &str) -> Vec<Pos> {
        self.positions()
            .filter(|p| matches!(self.get(*p), Some(MapCell::Object { shape: s, .. }) if s == shape))
            .collect()
    }

    /// All known resting objects as `(pos, color, shape)`.
    pub fn objects(&self) -> Vec<(Pos, String, String)> {
        self.positions()
            .filter_map(|p| match self.get(p) {
                Some(MapCell::Object { shape, color }) => Some((p, color.clone(), shape.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn positions(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Pos::new(x, y)))
    }

    pub fn bfs(&self, start: Pos) -> Bfs {
        let mut dist = vec![-1i32; self.cells.len()];
        let mut parent = vec![u32::MAX; self.cells.len()];
        let mut order = Vec::new();
        if self.in_bounds(start) {
            let si = self.idx(start);
            dist[si] = 0;
            let mut queue = VecDeque::from([start]);
            while let Some(p) = queue.pop_front() {
                order.push(p);
                let d = dist[self.idx(p)];
                for n in p.neighbors() {
                    if self.in_bounds(n) && self.passable(n, start) {
                        let ni = self.idx(n);
                        if dist[ni] < 0 {
                            dist[ni] = d + 1;
                            parent[ni] = self.idx(p) as u32;
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
        Bfs {
            stride: self.stride,
            width: self.width,
            height: self.height,
            dist,
            parent,
            order,
        }
    }

    /// Number of known floor cells reachable from `start` through known
    /// floor, treating `blocked` cells as walls.
    pub fn known_reach(&self, start: Pos, blocked: &[Pos]) -> usize {
        if !self.in_bounds(start) {
            return 0;
        }
        let mut seen = vec![false; self.cells.len()];
        seen[self.idx(start)] = true;
        let mut queue = VecDeque::from([start]);
        let mut n = 0;
        while let Some(p) = queue.pop_front() {
            n += 1;
            for q in p.neighbors() {
                if !blocked.contains(&q) && self.in_bounds(q) && self.is_floor(q, start) && !seen[self.idx(q)] {
                    seen[self.idx(q)] = true;
                    queue.push_back(q);
                }
            }
        }
        n
    }

    /// Whether some in-bounds cell within vision range of a reachable cell is
    /// still unknown. Returns the nearest such reachable cell.
    pub fn exploration_target(&self, bfs: &Bfs, radius: i32) -> Option<Pos> {
        // 2-D prefix sums of the unknown indicator over the bounded map.
        let w = self.width as usize;
        let h = self.height as usize;
        let mut pre = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                let u = matches!(self.cells[self.idx(Pos::new(x as i32, y as i32))], MapCell::Unknown) as u32;
                pre[(y + 1) * (w + 1) + x + 1] =
                    u + pre[y * (w + 1) + x + 1] + pre[(y + 1) * (w + 1) + x] - pre[y * (w + 1) + x];
            }
        }
        let window = |p: Pos| {
            let x0 = (p.x - radius).max(0) as usize;
            let y0 = (p.y - radius).max(0) as usize;
            let x1 = ((p.x + radius + 1) as usize).min(w);
            let y1 = ((p.y + radius + 1) as usize).min(h);
            pre[y1 * (w + 1) + x1] + pre[y0 * (w + 1) + x0] - pre[y0 * (w + 1) + x1] - pre[y1 * (w + 1) + x0]
        };
        bfs.order.iter().copied().find(|p| window(*p) > 0)
    }
}

#[derive(Debug, Clone)]
pub struct Bfs {
    stride: i32,
    width: i32,
    height: i32,
    dist: Vec<i32>,
    parent: Vec<u32>,
    /// Cells in nondecreasing distance order.
    order: Vec<Pos>,
}

impl Bfs {
    pub fn dist(&self, p: Pos) -> Option<i32> {
        if p.x < 0 || p.y < 0 || p.x >= self.width || p.y >= self.height {
            return None;
        }
        let d = self.dist[(p.y * self.stride + p.x) as usize];
        (d >= 0).then_some(d)
    }

    pub fn reachable(&self) -> &[Pos] {
        &self.order
    }

    /// The first cell on the shortest path to `goal`.
    pub fn first_step(&self, goal: Pos) -> Option<Pos> {
        let mut cur = goal;
        let mut d = self.dist(cur)?;
        if d == 0 {
            return None;
        }
        while d > 1 {
            let pi = self.parent[(cur.y * self.stride + cur.x) as usize];
            cur = Pos::new(pi as i32 % self.stride, pi as i32 / self.stride);
            d -= 1;
        }
        Some(cur)
    }

    /// Nearest reachable cell among `goals` (ties resolved by goal order).
    pub fn nearest(&self, goals: impl IntoIterator<Item = Pos>) -> Option<(Pos, i32)> {
        goals
            .into_iter()
            .filter_map(|g| self.dist(g).map(|d| (g, d)))
            .min_by_key(|(_, d)| *d)
    }
}

/// The action that turns `facing` towards `want` (right if that is a single
/// quarter turn, left otherwise).
pub fn turn_towards(facing: Facing, want: Facing) -> Action {
    if facing.right() == want {
        Action::of(ActionKind::TurnRight)
    } else {
        Action::of(ActionKind::TurnLeft)
    }
}

/// One action along the shortest path from `me` into the cell `next`.
pub fn move_into(me: Pos, facing: Facing, next: Pos) -> Action {
    let want = Facing::between(me, next).expect("adjacent step");
    if want == facing {
        Action::of(ActionKind::MoveForward)
    } else {
        turn_towards(facing, want)
    }
}

/// Outcome of trying to get into position to interact with a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Approach {
    /// Standing next to the target and facing it.
    Facing,
    Act(Action),
    Unreachable,
}

/// Moves to a cell orthogonally adjacent to `target` and turns to face it.
pub fn approach(map: &KnownMap, bfs: &Bfs, me: Pos, facing: Facing, target: Pos) -> Approach {
    if let Some(want) = Facing::between(me, target) {
        return if want == facing {
            Approach::Facing
        } else {
            Approach::Act(turn_towards(facing, want))
        };
    }
    let stands = target.neighbors().into_iter().filter(|n| map.passable(*n, me));
    match bfs.nearest(stands) {
        Some((goal, _)) => match bfs.first_step(goal) {
            Some(next) => Approach::Act(move_into(me, facing, next)),
            None => Approach::Unreachable,
        },
        None => Approach::Unreachable,
    }
}

/// Cells adjacent to `me` where a held object can be put down, in the
/// order faced, right, left, behind, split into those whose occupation
/// keeps every known floor cell reachable and those that would cut some
/// off. Only known floor counts as connecting, so an unexplored margin
/// cannot make a doorway look safe.
pub fn release_cells(map: &KnownMap, me: Pos, facing: Facing) -> (Vec<Pos>, Vec<Pos>) {
    let order = [facing, facing.right(), facing.left(), facing.right().right()];
    let baseline = map.known_reach(me, &[]);
    let mut safe = Vec::new();
    let mut unsafe_ = Vec::new();
    for f in order {
        let c = me.offset(f);
        if !map.is_floor(c, me) || c == me {
            continue;
        }
        if map.known_reach(me, &[c]) + 1 == baseline {
            safe.push(c);
        } else {
            unsafe_.push(c);
        }
    }
    (safe, unsafe_)
}

/// Three cells in a horizontal or vertical line, assigned to three objects.
///
/// `objects[i]` is the current cell of object `i`, or `None` if the planner
/// is carrying it. Exactly one resting object serves as the fixed anchor.
/// Returns `slots[i]` for each object, minimising the total fetch distance.
pub fn plan_row(map: &KnownMap, bfs: &Bfs, me: Pos, objects: [Option<Pos>; 3]) -> Option<[Pos; 3]> {
    let mut best: Option<(i32, [Pos; 3])> = None;
    let baseline = map.known_reach(me, &[]);
    for anchor in 0..3 {
        let Some(apos) = objects[anchor] else { continue };
        let others: Vec<usize> = (0..3).filter(|i| *i != anchor).collect();
        for (dx, dy) in [(1, 0), (0, 1)] {
            for k in 0..3 {
                let start = Pos::new(apos.x - k * dx, apos.y - k * dy);
                let row: Vec<Pos> = (0..3).map(|j| Pos::new(start.x + j * dx, start.y + j * dy)).collect();
                let free: Vec<Pos> = row.iter().copied().filter(|p| *p != apos).collect();
                for perm in [[0, 1], [1, 0]] {
                    let mut slots = [apos; 3];
                    let mut cost = 0;
                    let mut ok = true;
                    for (j, &oi) in others.iter().enumerate() {
                        let slot = free[perm[j]];
                        slots[oi] = slot;
                        let already = objects[oi] == Some(slot);
                        if !already && !map.is_floor(slot, me) {
                            ok = false;
                            break;
                        }
                        // need somewhere to stand that is not part of the row
                        let stand = slot
                            .neighbors()
                            .into_iter()
                            .filter(|n| !row.contains(n) && map.passable(*n, me))
                            .filter_map(|n| bfs.dist(n))
                            .min();
                        if !already && stand.is_none() {
                            ok = false;
                            break;
                        }
                        cost += match objects[oi] {
                            _ if already => 0,
                            Some(p) => {
                                let reach = p
                                    .neighbors()
                                    .into_iter()
                                    .filter_map(|n| bfs.dist(n))
                                    .min();
                                match reach {
                                    Some(r) => r + p.manhattan(slot),
                                    None => {
                                        ok = false;
                                        0
                                    }
                                }
                            }
                            None => stand.unwrap_or(0),
                        };
                    }
                    if ok {
                        // Filling the row must not wall off known floor.
                        let fresh: Vec<Pos> = (0..3).filter(|i| objects[*i] != Some(slots[*i]) && *i != anchor).map(|i| slots[i]).collect();
                        ok = map.known_reach(me, &fresh) + fresh.len() == baseline;
                    }
                    if ok && best.as_ref().is_none_or(|(c, _)| cost < *c) {
                        best = Some((cost, slots));
                    }
                }
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Three distinct cells forming a contiguous horizontal or vertical line.
pub fn is_row(cells: [Pos; 3]) -> bool {
    let mut xs = cells;
    xs.sort();
    let (a, b, c) = (xs[0], xs[1], xs[2]);
    let horizontal = a.y == b.y && b.y == c.y && b.x == a.x + 1 && c.x == b.x + 1;
    let vertical = a.x == b.x && b.x == c.x && b.y == a.y + 1 && c.y == b.y + 1;
    horizontal || vertical
}

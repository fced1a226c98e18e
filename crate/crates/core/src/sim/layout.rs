use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Avatar, ConfigError, Facing, Object, Pos, Role, WorldConfig, WorldState};

/// Builds the initial world for `config`. Deterministic in the config,
/// including `layout_seed`.
///
/// Rooms are separated by full-height wall columns, each with one doorway.
/// Objects and the setter are placed so that the open floor stays connected
/// and every object keeps at least one open neighbour.
pub fn init_world(config: &WorldConfig) -> Result<WorldState, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.layout_seed);
    let w = config.grid_width as i32;
    let h = config.grid_height as i32;

    let mut walls = Vec::new();
    for i in 1..config.room_count as i32 {
        let x = i * w / config.room_count as i32;
        let door = rng.random_range(1..h - 1);
        walls.extend((0..h).filter(|y| *y != door).map(|y| Pos::new(x, y)));
    }
    walls.sort();
    walls.dedup();

    let mut cells: Vec<Pos> = (0..h)
        .flat_map(|y| (0..w).map(move |x| Pos::new(x, y)))
        .filter(|p| walls.binary_search(p).is_err())
        .collect();
    let free = cells.len() as u32;
    if config.object_count.saturating_add(2) > free {
        return Err(ConfigError::InsufficientFreeCells {
            objects: config.object_count,
            free,
        });
    }
    cells.shuffle(&mut rng);

    let mut grid = OccupancyGrid::new(w, h, &walls);
    let mut objects = Vec::with_capacity(config.object_count as usize);
    for id in 0..config.object_count {
        let pos = grid.place_keeping_connected(&cells);
        let shape = config.shape_vocab[rng.random_range(0..config.shape_vocab.len())].clone();
        let color = config.color_vocab[rng.random_range(0..config.color_vocab.len())].clone();
        objects.push(Object {
            id,
            shape,
            color,
            pos,
            carried_by: None,
        });
    }
    let setter_pos = grid.place_keeping_connected(&cells);
    let solver_pos = grid.place_any(&cells);
    let setter_facing = Facing::ALL[rng.random_range(0..4)];
    let solver_facing = Facing::ALL[rng.random_range(0..4)];

    Ok(WorldState {
        config: config.clone(),
        tick: 0,
        objects,
        avatars: [
            Avatar {
                role: Role::Setter,
                pos: setter_pos,
                facing: setter_facing,
                held: None,
            },
            Avatar {
                role: Role::Solver,
                pos: solver_pos,
                facing: solver_facing,
                held: None,
            },
        ],
        events: Vec::new(),
        walls,
        inbox: [None, None],
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Cell {
    Open,
    Wall,
    Blocked,
}

struct OccupancyGrid {
    w: i32,
    h: i32,
    cells: Vec<Cell>,
    blocked: Vec<Pos>,
}

impl OccupancyGrid {
    fn new(w: i32, h: i32, walls: &[Pos]) -> Self {
        let mut cells = vec![Cell::Open; (w * h) as usize];
        for p in walls {
            cells[(p.y * w + p.x) as usize] = Cell::Wall;
        }
        Self {
            w,
            h,
            cells,
            blocked: Vec::new(),
        }
    }

    fn get(&self, p: Pos) -> Option<Cell> {
        if p.x < 0 || p.y < 0 || p.x >= self.w || p.y >= self.h {
            None
        } else {
            Some(self.cells[(p.y * self.w + p.x) as usize])
        }
    }

    fn set(&mut self, p: Pos, c: Cell) {
        self.cells[(p.y * self.w + p.x) as usize] = c;
    }

    fn open_connected_and_reachable(&self) -> bool {
        let Some(start) = self.cells.iter().position(|c| *c == Cell::Open) else {
            return false;
        };
        let total_open = self.cells.iter().filter(|c| **c == Cell::Open).count();
        let mut seen = vec![false; self.cells.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([Pos::new(start as i32 % self.w, start as i32 / self.w)]);
        let mut count = 1;
        while let Some(p) = queue.pop_front() {
            for n in p.neighbors() {
                if self.get(n) == Some(Cell::Open) {
                    let i = (n.y * self.w + n.x) as usize;
                    if !seen[i] {
                        seen[i] = true;
                        count += 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        count == total_open
            && self
                .blocked
                .iter()
                .all(|b| b.neighbors().iter().any(|n| self.get(*n) == Some(Cell::Open)))
    }

    fn place_keeping_connected(&mut self, order: &[Pos]) -> Pos {
        for &p in order {
            if self.get(p) != Some(Cell::Open) {
                continue;
            }
            self.set(p, Cell::Blocked);
            self.blocked.push(p);
            if self.open_connected_and_reachable() {
                return p;
            }
            self.blocked.pop();
            self.set(p, Cell::Open);
        }
        // Dense layouts may have no connectivity-preserving cell left.
        self.place_any(order)
    }

    fn place_any(&mut self, order: &[Pos]) -> Pos {
        let p = *order
            .iter()
            .find(|p| self.get(**p) == Some(Cell::Open))
            .expect("free cell count checked by caller");
        self.set(p, Cell::Blocked);
        self.blocked.push(p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Encode;

    #[test]
    fn same_config_gives_identical_bytes() {
        let c = WorldConfig::with_seed(7);
        let a = init_world(&c).unwrap();
        let b = init_world(&c).unwrap();
        assert_eq!(a.to_canonical_bytes(), b.to_canonical_bytes());
        assert_eq!(a.tick, 0);
        assert!(a.events.is_empty());
    }

    #[test]
    fn different_seeds_give_different_placements() {
        let a = init_world(&WorldConfig::with_seed(1)).unwrap();
        let b = init_world(&WorldConfig::with_seed(2)).unwrap();
        let pa: Vec<Pos> = a.objects.iter().map(|o| o.pos).collect();
        let pb: Vec<Pos> = b.objects.iter().map(|o| o.pos).collect();
        assert_ne!(pa, pb);
    }

    #[test]
    fn object_count_equal_to_area_is_rejected() {
        let c = WorldConfig {
            object_count: 121,
            ..WorldConfig::default()
        };
        let err = init_world(&c).unwrap_err();
        assert!(matches!(err, ConfigError::InsufficientFreeCells { .. }));
        assert!(err.to_string().contains("insufficient free cells"));
    }

    #[test]
    fn placements_respect_invariants() {
        for seed in 0..50 {
            let s = init_world(&WorldConfig::with_seed(seed)).unwrap();
            let mut occupied: Vec<Pos> = s.objects.iter().map(|o| o.pos).collect();
            occupied.extend(s.avatars.iter().map(|a| a.pos));
            let n = occupied.len();
            occupied.sort();
            occupied.dedup();
            assert_eq!(occupied.len(), n, "seed {seed}: overlapping placements");
            for p in &occupied {
                assert!(s.config.in_bounds(*p) && !s.is_wall(*p));
            }
            // one doorway per divider
            assert_eq!(s.walls.len(), 10);
        }
    }
}

//! The planning solver shared by the oracle, noisy-oracle and human-surrogate
//! agents. Plans on the agent's own map, re-planning every tick.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{AgentMemory, Task};
use crate::plan::{approach, is_row, move_into, plan_row, release_cells, turn_towards, Approach, Bfs, KnownMap};
use crate::sim::{Action, ActionKind, Facing, Observation, Pos, DEFAULT_COLORS, VISION_RADIUS};
use crate::task::{drop_cells, Instruction, ObjRef};

struct Ctx<'a> {
    map: &'a KnownMap,
    bfs: Bfs,
    me: Pos,
    facing: Facing,
    held: Option<ObjRef>,
}

impl Ctx<'_> {
    fn holding(&self, r: &ObjRef) -> bool {
        self.held.as_ref() == Some(r)
    }

    fn locate(&self, r: &ObjRef) -> Option<Pos> {
        self.map.find(&r.color, &r.shape).into_iter().next()
    }

    fn explore(&self) -> Action {
        self.map
            .exploration_target(&self.bfs, VISION_RADIUS)
            .and_then(|t| self.bfs.first_step(t))
            .map(|next| move_into(self.me, self.facing, next))
            .unwrap_or_else(Action::noop)
    }

    fn fully_explored(&self) -> bool {
        self.map.exploration_target(&self.bfs, VISION_RADIUS).is_none()
    }

    /// Walks up to `target` and performs `verb` once facing it.
    fn interact(&self, target: Pos, verb: ActionKind) -> Action {
        match approach(self.map, &self.bfs, self.me, self.facing, target) {
            Approach::Facing => Action::of(verb),
            Approach::Act(a) => a,
            Approach::Unreachable => Action::noop(),
        }
    }

    fn fetch(&self, r: &ObjRef) -> Action {
        match self.locate(r) {
            Some(p) => self.interact(p, ActionKind::Grasp),
            None => self.explore(),
        }
    }

    /// Puts the held object down next to the agent, avoiding `keep_clear`.
    /// If every adjacent cell would wall off known floor, walks to the
    /// nearest cell that offers a harmless drop first.
    fn put_down(&self, keep_clear: &[Pos]) -> Action {
        let (safe, risky) = release_cells(self.map, self.me, self.facing);
        let allowed = |c: &Pos| !keep_clear.contains(c);
        if let Some(c) = safe.iter().copied().find(allowed) {
            return self.drop_into(c);
        }
        let refuge = self.bfs.reachable().iter().skip(1).take(REFUGE_SEARCH).copied().find(|p| {
            let base = self.map.known_reach(*p, &[]);
            p.neighbors().into_iter().any(|c| {
                c != self.me && allowed(&c) && self.map.is_floor(c, *p) && self.map.known_reach(*p, &[c]) + 1 == base
            })
        });
        match (refuge.and_then(|p| self.bfs.first_step(p)), risky.into_iter().find(allowed)) {
            (Some(next), _) => move_into(self.me, self.facing, next),
            (None, Some(c)) => self.drop_into(c),
            (None, None) => self.explore(),
        }
    }

    fn drop_into(&self, c: Pos) -> Action {
        if self.me.offset(self.facing) == c {
            Action::of(ActionKind::Release)
        } else {
            turn_towards(self.facing, Facing::between(self.me, c).unwrap())
        }
    }
}

/// Reachable cells examined when looking for a better place to put
/// something down.
const REFUGE_SEARCH: usize = 64;

pub(super) fn act(obs: &Observation, mem: &mut AgentMemory) -> Action {
    let AgentMemory { rng, map, task, .. } = mem;
    let Some(task) = task.as_mut() else {
        return Action::noop();
    };
    let ctx = Ctx {
        bfs: map.bfs(obs.pos),
        map,
        me: obs.pos,
        facing: obs.facing,
        held: obs.held.as_ref().map(|(shape, color)| ObjRef::new(color, shape)),
    };

    if task.instr.category().is_instruction_following() {
        let instr = if task.corrupted {
            match substituted(&ctx, task, rng) {
                Some(i) => i,
                None => return ctx.explore(),
            }
        } else {
            task.instr.clone()
        };
        follow(&ctx, task, &instr)
    } else {
        answer(&ctx, task, rng)
    }
}

/// The instruction with one manipulated object swapped for a distractor.
fn substituted(ctx: &Ctx<'_>, task: &mut Task, rng: &mut impl Rng) -> Option<Instruction> {
    let mentioned: Vec<ObjRef> = match &task.instr {
        Instruction::Lift(a) => vec![a.clone()],
        Instruction::TouchWith { target, tool } => vec![target.clone(), tool.clone()],
        Instruction::BringTo { object, destination } => vec![object.clone(), destination.clone()],
        Instruction::ArrangeRow(objs) => objs.to_vec(),
        _ => return Some(task.instr.clone()),
    };
    if task.substitute.is_none() {
        let like = &mentioned[0];
        let candidates: Vec<ObjRef> = ctx
            .map
            .objects()
            .into_iter()
            .map(|(_, c, s)| ObjRef::new(c, s))
            .filter(|r| !mentioned.contains(r))
            .collect();
        let similar: Vec<&ObjRef> = candidates
            .iter()
            .filter(|r| r.color == like.color || r.shape == like.shape)
            .collect();
        let pick = if similar.is_empty() {
            candidates.choose(rng)
        } else {
            similar.choose(rng).copied()
        };
        task.substitute = Some(pick?.clone());
    }
    let sub = task.substitute.clone()?;
    Some(match &task.instr {
        Instruction::Lift(_) => Instruction::Lift(sub),
        Instruction::TouchWith { tool, .. } => Instruction::TouchWith {
            target: sub,
            tool: tool.clone(),
        },
        Instruction::BringTo { destination, .. } => Instruction::BringTo {
            object: sub,
            destination: destination.clone(),
        },
        Instruction::ArrangeRow([_, b, c]) => Instruction::ArrangeRow([sub, b.clone(), c.clone()]),
        other => other.clone(),
    })
}

fn follow(ctx: &Ctx<'_>, task: &mut Task, instr: &Instruction) -> Action {
    match instr {
        Instruction::Lift(target) => {
            if ctx.holding(target) {
                Action::noop()
            } else if ctx.held.is_some() {
                ctx.put_down(&[])
            } else {
                ctx.fetch(target)
            }
        }
        Instruction::TouchWith { target, tool } => {
            if task.touched {
                Action::noop()
            } else if ctx.holding(tool) {
                let Some(p) = ctx.locate(target) else {
                    return ctx.explore();
                };
                match approach(ctx.map, &ctx.bfs, ctx.me, ctx.facing, p) {
                    Approach::Facing => {
                        task.touched = true;
                        Action::of(ActionKind::Grasp)
                    }
                    Approach::Act(a) => a,
                    Approach::Unreachable => Action::noop(),
                }
            } else if ctx.held.is_some() {
                ctx.put_down(&[])
            } else {
                ctx.fetch(tool)
            }
        }
        Instruction::BringTo { object, destination } => {
            let Some(dest) = ctx.locate(destination) else {
                return ctx.explore();
            };
            if ctx.holding(object) {
                let best = drop_cells(ctx.map, &ctx.bfs, ctx.me, dest)
                    .filter(|c| *c != ctx.me)
                    .filter_map(|c| stand_distance(ctx, c).map(|d| (c, d)))
                    .min_by_key(|(_, d)| *d);
                match best {
                    Some((c, _)) => ctx.interact(c, ActionKind::Release),
                    None => Action::noop(),
                }
            } else if ctx.held.is_some() {
                ctx.put_down(&[])
            } else {
                match ctx.locate(object) {
                    Some(p) if p.chebyshev(dest) <= 1 => Action::noop(),
                    Some(p) => ctx.interact(p, ActionKind::Grasp),
                    None => ctx.explore(),
                }
            }
        }
        Instruction::ArrangeRow(refs) => arrange(ctx, task, refs),
        _ => Action::noop(),
    }
}

fn stand_distance(ctx: &Ctx<'_>, cell: Pos) -> Option<i32> {
    if cell.manhattan(ctx.me) == 1 {
        return Some(0);
    }
    cell.neighbors()
        .into_iter()
        .filter(|n| ctx.map.passable(*n, ctx.me))
        .filter_map(|n| ctx.bfs.dist(n))
        .min()
}

fn arrange(ctx: &Ctx<'_>, task: &mut Task, refs: &[ObjRef; 3]) -> Action {
    let mut positions = [None; 3];
    for (i, r) in refs.iter().enumerate() {
        if ctx.holding(r) {
            continue;
        }
        match ctx.locate(r) {
            Some(p) => positions[i] = Some(p),
            None => return ctx.explore(),
        }
    }
    if let [Some(a), Some(b), Some(c)] = positions {
        if is_row([a, b, c]) {
            return Action::noop();
        }
    }
    let still_valid = task.row_slots.is_some_and(|slots| {
        slots
            .iter()
            .zip(positions)
            .all(|(s, p)| p == Some(*s) || ctx.map.is_floor(*s, ctx.me))
    });
    if !still_valid {
        task.row_slots = plan_row(ctx.map, &ctx.bfs, ctx.me, positions);
    }
    let Some(slots) = task.row_slots else {
        return Action::noop();
    };
    if let Some(i) = refs.iter().position(|r| ctx.holding(r)) {
        return ctx.interact(slots[i], ActionKind::Release);
    }
    if ctx.held.is_some() {
        return ctx.put_down(&slots);
    }
    match (0..3).find(|i| positions[*i] != Some(slots[*i])) {
        Some(i) => ctx.interact(positions[i].unwrap(), ActionKind::Grasp),
        None => Action::noop(),
    }
}

fn answer(ctx: &Ctx<'_>, task: &mut Task, rng: &mut impl Rng) -> Action {
    if task.answered {
        return Action::noop();
    }
    let right = match &task.instr {
        Instruction::Holding => Some(ctx.held.as_ref().map(|r| r.to_string()).unwrap_or_else(|| "nothing".into())),
        Instruction::Exists(r) => {
            if ctx.holding(r) || ctx.locate(r).is_some() {
                Some("yes".into())
            } else if ctx.fully_explored() {
                Some("no".into())
            } else {
                None
            }
        }
        Instruction::ColorOf { shape } => match &ctx.held {
            Some(h) if &h.shape == shape => Some(h.color.clone()),
            _ => match ctx.map.find_shape(shape).first() {
                Some(p) => match ctx.map.get(*p) {
                    Some(crate::plan::MapCell::Object { color, .. }) => Some(color.clone()),
                    _ => None,
                },
                None if ctx.fully_explored() => Some("nothing".into()),
                None => None,
            },
        },
        Instruction::Count { shape } => ctx.fully_explored().then(|| {
            let held = ctx.held.as_ref().is_some_and(|h| &h.shape == shape) as usize;
            (ctx.map.find_shape(shape).len() + held).to_string()
        }),
        _ => Some(String::new()),
    };
    let Some(right) = right else {
        return ctx.explore();
    };
    let said = if task.corrupted {
        task.wrong_answer
            .get_or_insert_with(|| wrong_answer(&task.instr, &right, ctx, rng))
            .clone()
    } else {
        right
    };
    task.answered = true;
    Action::say(said)
}

fn wrong_answer(instr: &Instruction, right: &str, ctx: &Ctx<'_>, rng: &mut impl Rng) -> String {
    let pool: Vec<String> = match instr {
        Instruction::Exists(_) => vec!["yes".into(), "no".into()],
        Instruction::ColorOf { .. } => DEFAULT_COLORS.iter().map(|c| c.to_string()).collect(),
        Instruction::Count { .. } => (0..=5).map(|n| n.to_string()).collect(),
        _ => {
            let mut v: Vec<String> = ctx
                .map
                .objects()
                .into_iter()
                .map(|(_, c, s)| format!("{c} {s}"))
                .collect();
            v.push("nothing".into());
            v
        }
    };
    let wrong: Vec<&String> = pool.iter().filter(|a| a.as_str() != right).collect();
    wrong
        .choose(rng)
        .map(|s| (*s).clone())
        .unwrap_or_else(|| format!("not {right}"))
}

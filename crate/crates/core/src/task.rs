//! Prompt categories, the instruction grammar, ground-truth answers and the
//! scripted instruction generator.
//!
//! Grammar (lowercase, single spaces):
//!
//! ```text
//! lift the <color> <shape>
//! touch the <color> <shape> with the <color> <shape>
//! bring the <color> <shape> to the <color> <shape>
//! arrange the <color> <shape> and the <color> <shape> and the <color> <shape> in a row
//! is there a <color> <shape>
//! what color is the <shape>
//! how many <shape>s
//! what are you holding
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{is_row, plan_row, KnownMap};
use crate::sim::{Object, Pos, Role, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    InstructionFollowing,
    QuestionAnswering,
}

impl CategoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CategoryKind::InstructionFollowing => "instruction_following",
            CategoryKind::QuestionAnswering => "question_answering",
        }
    }
}

impl fmt::Display for CategoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Lift,
    TouchWith,
    BringTo,
    ArrangeRow,
    ExistsYesno,
    ColorOf,
    CountShape,
    HeldObject,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Lift,
        Category::TouchWith,
        Category::BringTo,
        Category::ArrangeRow,
        Category::ExistsYesno,
        Category::ColorOf,
        Category::CountShape,
        Category::HeldObject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Lift => "lift",
            Category::TouchWith => "touch_with",
            Category::BringTo => "bring_to",
            Category::ArrangeRow => "arrange_row",
            Category::ExistsYesno => "exists_yesno",
            Category::ColorOf => "color_of",
            Category::CountShape => "count_shape",
            Category::HeldObject => "held_object",
        }
    }

    pub fn kind(self) -> CategoryKind {
        match self {
            Category::Lift | Category::TouchWith | Category::BringTo | Category::ArrangeRow => {
                CategoryKind::InstructionFollowing
            }
            _ => CategoryKind::QuestionAnswering,
        }
    }

    pub fn is_instruction_following(self) -> bool {
        self.kind() == CategoryKind::InstructionFollowing
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

/// An object named by color and shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjRef {
    pub color: String,
    pub shape: String,
}

impl ObjRef {
    pub fn new(color: impl Into<String>, shape: impl Into<String>) -> Self {
        Self {
            color: color.into(),
            shape: shape.into(),
        }
    }

    pub fn of(o: &Object) -> Self {
        Self::new(&o.color, &o.shape)
    }

    pub fn matches(&self, o: &Object) -> bool {
        o.color == self.color && o.shape == self.shape
    }

    /// All objects in `state` matching this reference.
    pub fn resolve<'a>(&self, state: &'a WorldState) -> Vec<&'a Object> {
        state.objects.iter().filter(|o| self.matches(o)).collect()
    }

    /// The single matching object, if the reference is unambiguous.
    pub fn resolve_unique<'a>(&self, state: &'a WorldState) -> Option<&'a Object> {
        match self.resolve(state).as_slice() {
            [one] => Some(one),
            _ => None,
        }
    }
}

impl fmt::Display for ObjRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color, self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instruction {
    Lift(ObjRef),
    TouchWith { target: ObjRef, tool: ObjRef },
    BringTo { object: ObjRef, destination: ObjRef },
    ArrangeRow([ObjRef; 3]),
    Exists(ObjRef),
    ColorOf { shape: String },
    Count { shape: String },
    Holding,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable instruction {0:?}")]
pub struct ParseError(pub String);

impl Instruction {
    pub fn category(&self) -> Category {
        match self {
            Instruction::Lift(_) => Category::Lift,
            Instruction::TouchWith { .. } => Category::TouchWith,
            Instruction::BringTo { .. } => Category::BringTo,
            Instruction::ArrangeRow(_) => Category::ArrangeRow,
            Instruction::Exists(_) => Category::ExistsYesno,
            Instruction::ColorOf { .. } => Category::ColorOf,
            Instruction::Count { .. } => Category::CountShape,
            Instruction::Holding => Category::HeldObject,
        }
    }

    /// Objects the instruction asks the solver to manipulate.
    pub fn manipulated(&self) -> Vec<&ObjRef> {
        match self {
            Instruction::Lift(o) => vec![o],
            Instruction::TouchWith { tool, .. } => vec![tool],
            Instruction::BringTo { object, .. } => vec![object],
            Instruction::ArrangeRow(objs) => objs.iter().collect(),
            _ => vec![],
        }
    }

    pub fn parse(text: &str) -> Result<Instruction, ParseError> {
        let lower = text.trim().to_lowercase();
        let words: Vec<&str> = lower.split_whitespace().collect();
        let err = || ParseError(text.to_string());
        let obj = |w: &[&str]| -> Option<ObjRef> {
            match w {
                ["the", c, s] => Some(ObjRef::new(*c, *s)),
                _ => None,
            }
        };
        let parsed = match words.as_slice() {
            ["lift", rest @ ..] => obj(rest).map(Instruction::Lift),
            ["touch", a @ .., "with", "the", c, s] => obj(a).map(|target| Instruction::TouchWith {
                target,
                tool: ObjRef::new(*c, *s),
            }),
            ["bring", a @ .., "to", "the", c, s] => obj(a).map(|object| Instruction::BringTo {
                object,
                destination: ObjRef::new(*c, *s),
            }),
            ["arrange", "the", c1, s1, "and", "the", c2, s2, "and", "the", c3, s3, "in", "a", "row"] => {
                Some(Instruction::ArrangeRow([
                    ObjRef::new(*c1, *s1),
                    ObjRef::new(*c2, *s2),
                    ObjRef::new(*c3, *s3),
                ]))
            }
            ["is", "there", "a" | "an", c, s] => Some(Instruction::Exists(ObjRef::new(*c, *s))),
            ["what", "color", "is", "the", s] => Some(Instruction::ColorOf {
                shape: s.to_string(),
            }),
            ["how", "many", plural] => plural.strip_suffix('s').filter(|s| !s.is_empty()).map(|s| {
                Instruction::Count {
                    shape: s.to_string(),
                }
            }),
            ["what", "are", "you", "holding"] => Some(Instruction::Holding),
            _ => None,
        };
        parsed.ok_or_else(err)
    }

    /// The expected answer for QA instructions, from the solver's viewpoint
    /// in `state`. `None` for instruction-following prompts.
    pub fn answer(&self, state: &WorldState) -> Option<String> {
        match self {
            Instruction::Exists(r) => Some(if r.resolve(state).is_empty() { "no" } else { "yes" }.into()),
            Instruction::ColorOf { shape } => {
                let matches: Vec<&Object> = state.objects.iter().filter(|o| &o.shape == shape).collect();
                matches.first().map(|o| o.color.clone())
            }
            Instruction::Count { shape } => {
                Some(state.objects.iter().filter(|o| &o.shape == shape).count().to_string())
            }
            Instruction::Holding => Some(
                state
                    .held_object(Role::Solver)
                    .map(|o| o.describe())
                    .unwrap_or_else(|| "nothing".into()),
            ),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Lift(o) => write!(f, "lift the {o}"),
            Instruction::TouchWith { target, tool } => write!(f, "touch the {target} with the {tool}"),
            Instruction::BringTo { object, destination } => {
                write!(f, "bring the {object} to the {destination}")
            }
            Instruction::ArrangeRow([a, b, c]) => {
                write!(f, "arrange the {a} and the {b} and the {c} in a row")
            }
            Instruction::Exists(o) => write!(f, "is there a {o}"),
            Instruction::ColorOf { shape } => write!(f, "what color is the {shape}"),
            Instruction::Count { shape } => write!(f, "how many {shape}s"),
            Instruction::Holding => f.write_str("what are you holding"),
        }
    }
}

/// Normalises an utterance for answer comparison.
pub fn normalize_answer(text: &str) -> String {
    text.trim().to_lowercase()
}

/// Objects whose color/shape combination occurs exactly once and that the
/// setter is not carrying.
fn unique_objects(state: &WorldState) -> Vec<&Object> {
    state
        .objects
        .iter()
        .filter(|o| o.carried_by != Some(Role::Setter))
        .filter(|o| state.objects.iter().filter(|p| p.color == o.color && p.shape == o.shape).count() == 1)
        .collect()
}

fn resting_pos(o: &Object) -> Option<Pos> {
    o.carried_by.is_none().then_some(o.pos)
}

/// Draws an instruction of `category` that is well-posed and achievable in
/// `state`. Returns `None` when the world offers no valid instance.
pub fn generate_instruction<R: Rng>(category: Category, state: &WorldState, rng: &mut R) -> Option<Instruction> {
    let uniq = unique_objects(state);
    let solver_holds = state.avatar(Role::Solver).held;
    let map = KnownMap::from_state(state);
    let me = state.avatar(Role::Solver).pos;
    let bfs = map.bfs(me);
    let reachable = |o: &Object| match resting_pos(o) {
        None => o.carried_by == Some(Role::Solver),
        Some(p) => p.neighbors().iter().any(|n| bfs.dist(*n).is_some()),
    };
    match category {
        Category::Lift => {
            let c: Vec<&&Object> = uniq
                .iter()
                .filter(|o| Some(o.id) != solver_holds && reachable(o))
                .collect();
            c.choose(rng).map(|o| Instruction::Lift(ObjRef::of(o)))
        }
        Category::TouchWith => {
            let tools: Vec<&&Object> = uniq.iter().filter(|o| reachable(o)).collect();
            let tool = *tools.choose(rng)?;
            let targets: Vec<&&Object> = uniq
                .iter()
                .filter(|o| o.id != tool.id && o.carried_by.is_none() && reachable(o))
                .collect();
            let target = *targets.choose(rng)?;
            Some(Instruction::TouchWith {
                target: ObjRef::of(target),
                tool: ObjRef::of(tool),
            })
        }
        Category::BringTo => {
            let objs: Vec<&&Object> = uniq.iter().filter(|o| reachable(o)).collect();
            let object = *objs.choose(rng)?;
            let dests: Vec<&&Object> = uniq
                .iter()
                .filter(|d| {
                    d.id != object.id
                        && d.carried_by.is_none()
                        && object.pos.chebyshev(d.pos) > 1
                        && drop_cells(&map, &bfs, me, d.pos).next().is_some()
                })
                .collect();
            let destination = *dests.choose(rng)?;
            Some(Instruction::BringTo {
                object: ObjRef::of(object),
                destination: ObjRef::of(destination),
            })
        }
        Category::ArrangeRow => {
            let pool: Vec<&Object> = uniq.iter().copied().filter(|o| reachable(o)).collect();
            for _ in 0..32 {
                let picked: Vec<&&Object> = pool.choose_multiple(rng, 3).collect();
                if picked.len() < 3 {
                    return None;
                }
                let cells = [picked[0].pos, picked[1].pos, picked[2].pos];
                if is_row(cells) {
                    continue;
                }
                let positions = [resting_pos(picked[0]), resting_pos(picked[1]), resting_pos(picked[2])];
                if plan_row(&map, &bfs, me, positions).is_some() {
                    return Some(Instruction::ArrangeRow([
                        ObjRef::of(picked[0]),
                        ObjRef::of(picked[1]),
                        ObjRef::of(picked[2]),
                    ]));
                }
            }
            None
        }
        Category::ExistsYesno => {
            if rng.random_bool(0.5) {
                let any: Vec<&Object> = state.objects.iter().collect();
                any.choose(rng).map(|o| Instruction::Exists(ObjRef::of(o)))
            } else {
                let absent: Vec<ObjRef> = state
                    .config
                    .color_vocab
                    .iter()
                    .flat_map(|c| state.config.shape_vocab.iter().map(move |s| ObjRef::new(c, s)))
                    .filter(|r| r.resolve(state).is_empty())
                    .collect();
                absent.choose(rng).cloned().map(Instruction::Exists)
            }
        }
        Category::ColorOf => {
            let singletons: Vec<&String> = state
                .config
                .shape_vocab
                .iter()
                .filter(|s| state.objects.iter().filter(|o| &o.shape == *s).count() == 1)
                .collect();
            singletons
                .choose(rng)
                .map(|s| Instruction::ColorOf { shape: (*s).clone() })
        }
        Category::CountShape => {
            let present: Vec<&String> = state
                .config
                .shape_vocab
                .iter()
                .filter(|s| state.objects.iter().any(|o| &o.shape == *s))
                .collect();
            present.choose(rng).map(|s| Instruction::Count { shape: (*s).clone() })
        }
        Category::HeldObject => Some(Instruction::Holding),
    }
}

/// Free cells within Chebyshev distance 1 of `dest` that can be faced from
/// some reachable standing cell.
pub fn drop_cells<'a>(
    map: &'a KnownMap,
    bfs: &'a crate::plan::Bfs,
    me: Pos,
    dest: Pos,
) -> impl Iterator<Item = Pos> + 'a {
    (-1..=1)
        .flat_map(move |dy| (-1..=1).map(move |dx| Pos::new(dest.x + dx, dest.y + dy)))
        .filter(move |c| *c != dest && map.is_floor(*c, me))
        .filter(move |c| {
            c.neighbors()
                .iter()
                .any(|n| map.passable(*n, me) && bfs.dist(*n).is_some())
        })
}

/// Heuristic difficulty from distance to the referenced objects and the
/// number of distractors sharing a color or shape with them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    pub fn assess(instr: &Instruction, state: &WorldState) -> Difficulty {
        let me = state.avatar(Role::Solver).pos;
        let refs: Vec<&ObjRef> = match instr {
            Instruction::Lift(o) | Instruction::Exists(o) => vec![o],
            Instruction::TouchWith { target, tool } => vec![target, tool],
            Instruction::BringTo { object, destination } => vec![object, destination],
            Instruction::ArrangeRow(objs) => objs.iter().collect(),
            _ => vec![],
        };
        let mut distance = 0;
        let mut distractors = 0;
        for r in &refs {
            if let Some(o) = r.resolve(state).first() {
                distance += o.pos.manhattan(me);
            }
            distractors += state
                .objects
                .iter()
                .filter(|o| !r.matches(o) && (o.color == r.color || o.shape == r.shape))
                .count() as i32;
        }
        if let Instruction::ColorOf { shape } | Instruction::Count { shape } = instr {
            distractors += state.objects.iter().filter(|o| &o.shape != shape).count() as i32 / 3;
        }
        let score = distance + 2 * distractors;
        match score {
            s if s <= 8 => Difficulty::Easy,
            s if s <= 16 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{init_world, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grammar_roundtrip() {
        let cases = [
            "lift the red ball",
            "touch the red candle with the white pillow",
            "bring the red ball to the blue cube",
            "arrange the red ball and the blue cube and the green book in a row",
            "is there a blue cube",
            "what color is the plant",
            "how many candles",
            "what are you holding",
        ];
        for c in cases {
            let i = Instruction::parse(c).unwrap();
            assert_eq!(i.to_string(), c);
        }
        assert_eq!(
            Instruction::parse("Lift  the RED ball").unwrap(),
            Instruction::Lift(ObjRef::new("red", "ball"))
        );
    }

    #[test]
    fn unparseable_inputs() {
        for bad in ["", "dance", "lift the ball", "how many s", "touch the red candle"] {
            assert!(Instruction::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn generated_instructions_are_well_posed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..30 {
            let s = init_world(&WorldConfig::with_seed(seed)).unwrap();
            for cat in Category::ALL {
                if let Some(i) = generate_instruction(cat, &s, &mut rng) {
                    assert_eq!(i.category(), cat);
                    assert_eq!(Instruction::parse(&i.to_string()).unwrap(), i);
                    for r in i.manipulated() {
                        assert!(r.resolve_unique(&s).is_some(), "{i}");
                    }
                    if cat.kind() == CategoryKind::QuestionAnswering {
                        assert!(i.answer(&s).is_some());
                    }
                }
            }
        }
    }

    #[test]
    fn category_names_roundtrip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert!("dance".parse::<Category>().is_err());
    }
}

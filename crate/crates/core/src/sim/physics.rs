use super::{Action, ActionKind, Event, EventKind, EventSubject, Role, WorldState};

impl WorldState {
    /// Advances the world by one tick. Pure: the input state is untouched.
    pub fn step(&self, setter_action: &Action, solver_action: &Action) -> WorldState {
        let mut next = self.clone();
        next.step_in_place(setter_action, solver_action);
        next
    }

    /// In-place variant of [`WorldState::step`].
    ///
    /// The setter's action resolves before the solver's. Physically invalid
    /// actions become `blocked` events; they never fail.
    pub fn step_in_place(&mut self, setter_action: &Action, solver_action: &Action) {
        self.inbox = [None, None];
        self.apply(Role::Setter, setter_action);
        self.apply(Role::Solver, solver_action);
        self.tick += 1;
    }

    fn log(&mut self, kind: EventKind, actor: Role, subject: EventSubject, target: Option<u32>) {
        self.events.push(Event {
            tick: self.tick,
            kind,
            actor,
            subject,
            target,
        });
    }

    fn blocked(&mut self, role: Role) {
        self.log(
            EventKind::Blocked,
            role,
            EventSubject::Text(role.as_str().to_string()),
            None,
        );
    }

    fn apply(&mut self, role: Role, action: &Action) {
        let ri = role.index();
        match action.kind {
            ActionKind::Noop => {}
            ActionKind::TurnLeft => {
                let a = &mut self.avatars[ri];
                a.facing = a.facing.left();
            }
            ActionKind::TurnRight => {
                let a = &mut self.avatars[ri];
                a.facing = a.facing.right();
            }
            ActionKind::MoveForward => {
                let target = self.faced_cell(role);
                if self.is_free(target) {
                    self.avatars[ri].pos = target;
                    if let Some(id) = self.avatars[ri].held {
                        if let Some(o) = self.objects.iter_mut().find(|o| o.id == id) {
                            o.pos = target;
                        }
                    }
                } else {
                    self.blocked(role);
                }
            }
            ActionKind::Grasp => {
                let faced = self.faced_cell(role);
                let Some(target) = self.object_at(faced).map(|o| o.id) else {
                    self.blocked(role);
                    return;
                };
                match self.avatars[ri].held {
                    None => {
                        let pos = self.avatars[ri].pos;
                        let o = self.objects.iter_mut().find(|o| o.id == target).unwrap();
                        o.carried_by = Some(role);
                        o.pos = pos;
                        self.avatars[ri].held = Some(target);
                        self.log(EventKind::Lifted, role, EventSubject::Object(target), None);
                    }
                    Some(tool) => {
                        self.log(
                            EventKind::Touched,
                            role,
                            EventSubject::Object(tool),
                            Some(target),
                        );
                    }
                }
            }
            ActionKind::Release => {
                let faced = self.faced_cell(role);
                match self.avatars[ri].held {
                    Some(id) if self.is_free(faced) => {
                        let o = self.objects.iter_mut().find(|o| o.id == id).unwrap();
                        o.carried_by = None;
                        o.pos = faced;
                        self.avatars[ri].held = None;
                        self.log(EventKind::Released, role, EventSubject::Object(id), None);
                    }
                    _ => self.blocked(role),
                }
            }
            ActionKind::Say => match &action.utterance {
                Some(text) if action.is_well_formed() => {
                    self.inbox[role.other().index()] = Some(text.clone());
                    self.log(EventKind::Said, role, EventSubject::Text(text.clone()), None);
                }
                _ => self.blocked(role),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Avatar, Facing, Object, Pos, WorldConfig};
    use super::*;
    use crate::codec::Encode;

    fn obj(id: u32, shape: &str, color: &str, x: i32, y: i32) -> Object {
        Object {
            id,
            shape: shape.into(),
            color: color.into(),
            pos: Pos::new(x, y),
            carried_by: None,
        }
    }

    /// A bare world with no walls: setter parked in a corner, solver at
    /// (1, 1) facing east.
    fn tiny(objects: Vec<Object>) -> WorldState {
        WorldState {
            config: WorldConfig {
                grid_width: 5,
                grid_height: 5,
                room_count: 1,
                object_count: objects.len() as u32,
                ..WorldConfig::default()
            },
            tick: 0,
            objects,
            avatars: [
                Avatar {
                    role: Role::Setter,
                    pos: Pos::new(4, 4),
                    facing: Facing::N,
                    held: None,
                },
                Avatar {
                    role: Role::Solver,
                    pos: Pos::new(1, 1),
                    facing: Facing::E,
                    held: None,
                },
            ],
            events: vec![],
            walls: vec![],
            inbox: [None, None],
        }
    }

    #[test]
    fn noop_only_advances_tick() {
        let s = tiny(vec![obj(0, "ball", "red", 2, 1)]);
        let n = s.step(&Action::noop(), &Action::noop());
        let mut expected = s.clone();
        expected.tick = 1;
        assert_eq!(n.to_canonical_bytes(), expected.to_canonical_bytes());
    }

    #[test]
    fn grasp_empty_handed_lifts_faced_object() {
        let s = tiny(vec![obj(0, "ball", "red", 2, 1)]);
        let n = s.step(&Action::noop(), &Action::of(ActionKind::Grasp));
        assert_eq!(n.avatar(Role::Solver).held, Some(0));
        assert_eq!(n.objects[0].carried_by, Some(Role::Solver));
        assert_eq!(n.objects[0].pos, Pos::new(1, 1));
        assert_eq!(n.events.len(), 1);
        assert_eq!(n.events[0].kind, EventKind::Lifted);
        assert_eq!(n.events[0].subject, EventSubject::Object(0));
        assert_eq!(n.events[0].tick, 0);
    }

    #[test]
    fn grasp_while_holding_touches_without_transfer() {
        let mut s = tiny(vec![
            obj(0, "pillow", "white", 1, 1),
            obj(1, "candle", "red", 2, 1),
        ]);
        s.objects[0].carried_by = Some(Role::Solver);
        s.avatars[1].held = Some(0);
        let n = s.step(&Action::noop(), &Action::of(ActionKind::Grasp));
        assert_eq!(n.avatar(Role::Solver).held, Some(0));
        assert_eq!(n.objects[1].carried_by, None);
        let e = &n.events[0];
        assert_eq!(e.kind, EventKind::Touched);
        assert_eq!(e.subject, EventSubject::Object(0));
        assert_eq!(e.target, Some(1));
    }

    #[test]
    fn move_into_object_is_blocked_and_carried_object_follows() {
        let s = tiny(vec![obj(0, "ball", "red", 2, 1)]);
        let n = s.step(&Action::noop(), &Action::of(ActionKind::MoveForward));
        assert_eq!(n.avatar(Role::Solver).pos, Pos::new(1, 1));
        assert_eq!(n.events[0].kind, EventKind::Blocked);

        let n = n.step(&Action::noop(), &Action::of(ActionKind::Grasp));
        let n = n.step(&Action::noop(), &Action::of(ActionKind::MoveForward));
        assert_eq!(n.avatar(Role::Solver).pos, Pos::new(2, 1));
        assert_eq!(n.objects[0].pos, Pos::new(2, 1));
    }

    #[test]
    fn release_places_in_faced_cell() {
        let s = tiny(vec![obj(0, "ball", "red", 2, 1)]);
        let n = s
            .step(&Action::noop(), &Action::of(ActionKind::Grasp))
            .step(&Action::noop(), &Action::of(ActionKind::TurnRight))
            .step(&Action::noop(), &Action::of(ActionKind::Release));
        assert_eq!(n.objects[0].pos, Pos::new(1, 2));
        assert_eq!(n.objects[0].carried_by, None);
        assert_eq!(n.avatar(Role::Solver).held, None);
        assert_eq!(n.events.last().unwrap().kind, EventKind::Released);
        assert_eq!(n.tick, 3);
    }

    #[test]
    fn say_reaches_counterpart_for_one_tick() {
        let s = tiny(vec![]);
        let n = s.step(&Action::say("lift the red ball"), &Action::noop());
        assert_eq!(n.inbox[Role::Solver.index()].as_deref(), Some("lift the red ball"));
        assert_eq!(n.inbox[Role::Setter.index()], None);
        let n = n.step(&Action::noop(), &Action::noop());
        assert_eq!(n.inbox, [None, None]);
        assert_eq!(n.events.len(), 1);
    }

    #[test]
    fn out_of_bounds_move_is_blocked() {
        let mut s = tiny(vec![]);
        s.avatars[1].pos = Pos::new(0, 0);
        s.avatars[1].facing = Facing::N;
        let n = s.step(&Action::noop(), &Action::of(ActionKind::MoveForward));
        assert_eq!(n.avatar(Role::Solver).pos, Pos::new(0, 0));
        assert_eq!(n.events[0].kind, EventKind::Blocked);
    }
}

//! Deterministic text-adventure engine.
//!
//! [`Engine`] interprets template actions against a [`WorldSpec`]. States are
//! plain values: `step` never mutates its input, so any state can be kept as a
//! branch point and stepped again. Inapplicable actions return
//! [`FAILURE_TEXT`] and leave everything but the step counter untouched.

use std::sync::Arc;

use thiserror::Error;

use crate::action::{self, ActionError, TemplateAction, WordId};
use crate::snapshot;
use crate::world::{Condition, FlagId, Location, ObjectId, RoomId, WorldSpec};

pub const FAILURE_TEXT: &str = "Nothing happens.";
pub const DEATH_TEXT: &str = "It is pitch black. You have been eaten by a grue.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("the episode is over; reset before stepping")]
    Finished,
    #[error(transparent)]
    Action(#[from] ActionError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GameState {
    pub room: RoomId,
    /// Carried objects in pickup order.
    pub inventory: Vec<ObjectId>,
    /// Location per object, indexed by object id.
    pub locations: Vec<Location>,
    /// Value per world flag, indexed by flag id.
    pub flags: Vec<bool>,
    pub score: i64,
    pub steps: u32,
    pub alive: bool,
    /// Per reward: has it fired this episode.
    pub fired: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub text: String,
    pub reward: i64,
    pub done: bool,
    pub score: i64,
}

/// How a template is interpreted, decided once from its pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    Look,
    Inventory,
    Move(WordId),
    Go,
    Open,
    Close,
    Take,
    Drop,
    Examine,
    Read,
    TurnOn,
    TurnOff,
    Eat,
    TakeFrom,
    PutIn,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct Engine {
    world: Arc<WorldSpec>,
    verbs: Vec<Verb>,
}

enum Outcome {
    Fail,
    Text(String),
}

impl Engine {
    pub fn new(world: impl Into<Arc<WorldSpec>>) -> Self {
        let world = world.into();
        let verbs = world
            .templates
            .iter()
            .map(|t| classify(&t.pattern(), &world))
            .collect();
        Engine { world, verbs }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn world_arc(&self) -> &Arc<WorldSpec> {
        &self.world
    }

    pub fn verb(&self, action: &TemplateAction) -> Verb {
        self.verbs
            .get(action.template.0 as usize)
            .copied()
            .unwrap_or(Verb::Unknown)
    }

    /// Direction word of a movement action (`down` or `go down`), if any.
    pub fn movement(&self, action: &TemplateAction) -> Option<WordId> {
        match self.verb(action) {
            Verb::Move(d) => Some(d),
            Verb::Go => action.fills.first().copied(),
            _ => None,
        }
    }

    pub fn parse(&self, text: &str) -> Result<TemplateAction, ActionError> {
        action::parse(text, &self.world.vocab, &self.world.templates)
    }

    pub fn render(&self, action: &TemplateAction) -> Result<String, ActionError> {
        action::render(action, &self.world.vocab, &self.world.templates)
    }

    /// Template id for the first template with the given verb.
    pub fn template_for(&self, verb: Verb) -> Option<action::TemplateId> {
        self.verbs
            .iter()
            .position(|v| *v == verb)
            .map(|i| action::TemplateId(i as u16))
    }

    /// The initial state. Worlds have no stochastic elements; `seed` is
    /// accepted for interface symmetry and ignored.
    pub fn reset(&self, _seed: u64) -> (GameState, Observation) {
        let w = &self.world;
        let mut inventory = Vec::new();
        for (i, o) in w.objects.iter().enumerate() {
            if o.location == Location::Inventory {
                inventory.push(ObjectId(i as u16));
            }
        }
        let state = GameState {
            room: w.start_room,
            inventory,
            locations: w.objects.iter().map(|o| o.location).collect(),
            flags: w.flags.iter().map(|f| f.initial).collect(),
            score: 0,
            steps: 0,
            alive: true,
            fired: vec![false; w.rewards.len()],
        };
        let obs = Observation {
            text: self.describe_room(&state),
            reward: 0,
            done: false,
            score: 0,
        };
        (state, obs)
    }

    pub fn is_won(&self, state: &GameState) -> bool {
        self.world
            .rewards
            .iter()
            .zip(&state.fired)
            .any(|(r, f)| *f && r.is_final)
    }

    pub fn is_done(&self, state: &GameState) -> bool {
        !state.alive || state.steps >= self.world.max_steps || self.is_won(state)
    }

    pub fn state_hash(&self, state: &GameState) -> u64 {
        snapshot::state_hash(state)
    }

    pub fn step(
        &self,
        state: &GameState,
        action: &TemplateAction,
    ) -> Result<(GameState, Observation), EngineError> {
        if self.is_done(state) {
            return Err(EngineError::Finished);
        }
        action::check_action(action, &self.world.vocab, &self.world.templates)?;

        let mut next = state.clone();
        next.steps += 1;
        let mut reward = 0;

        let text = match self.execute(&mut next, action) {
            Outcome::Fail => {
                // Step counter is the only trace of a failed command.
                let mut unchanged = state.clone();
                unchanged.steps += 1;
                next = unchanged;
                FAILURE_TEXT.to_string()
            }
            Outcome::Text(t) if !next.alive => {
                let penalty = self
                    .world
                    .hazard(next.room)
                    .map(|h| h.penalty)
                    .unwrap_or(0);
                next.score -= penalty;
                reward -= penalty;
                t
            }
            Outcome::Text(t) => {
                reward += self.fire_rewards(&mut next);
                t
            }
        };
        let obs = Observation {
            text,
            reward,
            done: self.is_done(&next),
            score: next.score,
        };
        Ok((next, obs))
    }

    fn fire_rewards(&self, s: &mut GameState) -> i64 {
        let mut gained = 0;
        for (i, r) in self.world.rewards.iter().enumerate() {
            if s.fired[i] {
                continue;
            }
            let holds = match r.condition {
                Condition::EnterRoom(room) => s.room == room,
                Condition::Take(o) => s.locations[o.0 as usize] == Location::Inventory,
                Condition::Flag(f) => s.flags[f.0 as usize],
            };
            if holds {
                s.fired[i] = true;
                s.score += r.points;
                gained += r.points;
            }
        }
        gained
    }

    fn execute(&self, s: &mut GameState, action: &TemplateAction) -> Outcome {
        let fill = |i: usize| action.fills.get(i).copied();
        match self.verb(action) {
            Verb::Look => Outcome::Text(self.describe_room(s)),
            Verb::Inventory => Outcome::Text(self.describe_inventory(s)),
            Verb::Move(dir) => self.go(s, dir),
            Verb::Go => match fill(0) {
                Some(dir) => self.go(s, dir),
                None => Outcome::Fail,
            },
            Verb::Open => self.with_object(s, fill(0), |e, s, o| e.open(s, o)),
            Verb::Close => self.with_object(s, fill(0), |e, s, o| e.close(s, o)),
            Verb::Take => self.with_object(s, fill(0), |e, s, o| e.take(s, o)),
            Verb::Drop => self.with_object(s, fill(0), |e, s, o| e.drop_obj(s, o)),
            Verb::Examine => {
                self.with_object(s, fill(0), |e, s, o| Outcome::Text(e.describe_object(s, o)))
            }
            Verb::Read => self.with_object(s, fill(0), |e, _, o| match &e.world.object(o).text {
                Some(t) => Outcome::Text(t.clone()),
                None => Outcome::Fail,
            }),
            Verb::TurnOn => self.with_object(s, fill(0), |e, s, o| e.switch(s, o, true)),
            Verb::TurnOff => self.with_object(s, fill(0), |e, s, o| e.switch(s, o, false)),
            Verb::TakeFrom => {
                let (Some(item), Some(from)) = (self.resolve(s, fill(0)), self.resolve(s, fill(1)))
                else {
                    return Outcome::Fail;
                };
                if s.locations[item.0 as usize] != Location::Inside(from) {
                    return Outcome::Fail;
                }
                self.take(s, item)
            }
            Verb::PutIn => {
                let (Some(item), Some(into)) = (self.resolve(s, fill(0)), self.resolve(s, fill(1)))
                else {
                    return Outcome::Fail;
                };
                self.put(s, item, into)
            }
            Verb::Eat | Verb::Unknown => Outcome::Fail,
        }
    }

    fn with_object(
        &self,
        s: &mut GameState,
        word: Option<WordId>,
        f: impl FnOnce(&Self, &mut GameState, ObjectId) -> Outcome,
    ) -> Outcome {
        match self.resolve(s, word) {
            Some(o) => f(self, s, o),
            None => Outcome::Fail,
        }
    }

    /// The in-scope object named by `word`.
    fn resolve(&self, s: &GameState, word: Option<WordId>) -> Option<ObjectId> {
        let o = self.world.object_by_noun(word?)?;
        self.in_scope(s, o).then_some(o)
    }

    fn flag(&self, s: &GameState, f: Option<FlagId>) -> Option<bool> {
        f.map(|f| s.flags[f.0 as usize])
    }

    fn is_open(&self, s: &GameState, o: ObjectId) -> bool {
        let obj = self.world.object(o);
        obj.container && self.flag(s, obj.open_flag).unwrap_or(true)
    }

    pub fn has_light(&self, s: &GameState) -> bool {
        s.inventory
            .iter()
            .any(|o| self.flag(s, self.world.object(*o).lit_flag) == Some(true))
    }

    fn room_visible(&self, s: &GameState) -> bool {
        !self.world.room(s.room).dark || self.has_light(s)
    }

    pub fn in_scope(&self, s: &GameState, o: ObjectId) -> bool {
        match s.locations[o.0 as usize] {
            Location::Inventory => true,
            Location::Room(r) => r == s.room && self.room_visible(s),
            Location::Inside(c) => self.is_open(s, c) && self.in_scope(s, c),
        }
    }

    fn go(&self, s: &mut GameState, dir: WordId) -> Outcome {
        let room = self.world.room(s.room);
        let Some(&(_, target)) = room.exits.iter().find(|(d, _)| *d == dir) else {
            return Outcome::Fail;
        };
        s.room = target;
        if let Some(h) = self.world.hazard(target) {
            if h.requires_light && !self.has_light(s) {
                s.alive = false;
                return Outcome::Text(DEATH_TEXT.to_string());
            }
        }
        Outcome::Text(self.describe_room(s))
    }

    fn open(&self, s: &mut GameState, o: ObjectId) -> Outcome {
        let obj = self.world.object(o);
        let Some(f) = obj.open_flag else {
            return Outcome::Fail;
        };
        if s.flags[f.0 as usize] {
            return Outcome::Fail;
        }
        s.flags[f.0 as usize] = true;
        let contents = self.contents(s, o);
        if contents.is_empty() {
            Outcome::Text("Opened.".into())
        } else {
            Outcome::Text(format!(
                "Opening the {} reveals {}.",
                self.phrase(o),
                self.list(&contents)
            ))
        }
    }

    fn close(&self, s: &mut GameState, o: ObjectId) -> Outcome {
        match self.world.object(o).open_flag {
            Some(f) if s.flags[f.0 as usize] => {
                s.flags[f.0 as usize] = false;
                Outcome::Text("Closed.".into())
            }
            _ => Outcome::Fail,
        }
    }

    fn take(&self, s: &mut GameState, o: ObjectId) -> Outcome {
        if !self.world.object(o).portable || s.locations[o.0 as usize] == Location::Inventory {
            return Outcome::Fail;
        }
        s.locations[o.0 as usize] = Location::Inventory;
        s.inventory.push(o);
        Outcome::Text("Taken.".into())
    }

    fn drop_obj(&self, s: &mut GameState, o: ObjectId) -> Outcome {
        if s.locations[o.0 as usize] != Location::Inventory {
            return Outcome::Fail;
        }
        s.locations[o.0 as usize] = Location::Room(s.room);
        s.inventory.retain(|x| *x != o);
        Outcome::Text("Dropped.".into())
    }

    fn put(&self, s: &mut GameState, item: ObjectId, into: ObjectId) -> Outcome {
        if item == into
            || s.locations[item.0 as usize] != Location::Inventory
            || !self.is_open(s, into)
        {
            return Outcome::Fail;
        }
        // Refuse to put a container inside something it (transitively) holds.
        let mut cur = s.locations[into.0 as usize];
        while let Location::Inside(c) = cur {
            if c == item {
                return Outcome::Fail;
            }
            cur = s.locations[c.0 as usize];
        }
        s.locations[item.0 as usize] = Location::Inside(into);
        s.inventory.retain(|x| *x != item);
        Outcome::Text("Done.".into())
    }

    fn switch(&self, s: &mut GameState, o: ObjectId, on: bool) -> Outcome {
        match self.world.object(o).lit_flag {
            Some(f) if s.flags[f.0 as usize] != on => {
                s.flags[f.0 as usize] = on;
                let state = if on { "on" } else { "off" };
                Outcome::Text(format!("The {} is now {state}.", self.phrase(o)))
            }
            _ => Outcome::Fail,
        }
    }

    // ---- text -----------------------------------------------------------

    fn contents(&self, s: &GameState, container: ObjectId) -> Vec<ObjectId> {
        (0..s.locations.len())
            .map(|i| ObjectId(i as u16))
            .filter(|o| s.locations[o.0 as usize] == Location::Inside(container))
            .collect()
    }

    /// Adjectives and noun, e.g. `small mailbox`.
    pub fn phrase(&self, o: ObjectId) -> String {
        let obj = self.world.object(o);
        let vocab = &self.world.vocab;
        let mut words: Vec<&str> = obj.adjectives.iter().map(|a| vocab.word(*a)).collect();
        words.push(vocab.word(obj.noun));
        words.join(" ")
    }

    fn with_article(&self, o: ObjectId) -> String {
        let p = self.phrase(o);
        let article = match p.chars().next() {
            Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
            _ => "a",
        };
        format!("{article} {p}")
    }

    fn list(&self, objects: &[ObjectId]) -> String {
        let items: Vec<String> = objects.iter().map(|o| self.with_article(*o)).collect();
        match items.len() {
            0 => String::new(),
            1 => items[0].clone(),
            n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
        }
    }

    fn describe_contents(&self, s: &GameState, o: ObjectId, out: &mut String) {
        if !self.is_open(s, o) {
            return;
        }
        let inner = self.contents(s, o);
        if inner.is_empty() {
            return;
        }
        out.push_str(&format!(" The {} contains {}.", self.phrase(o), self.list(&inner)));
        for i in inner {
            self.describe_contents(s, i, out);
        }
    }

    pub fn describe_room(&self, s: &GameState) -> String {
        if !self.room_visible(s) {
            return "It is pitch black.".into();
        }
        let room = self.world.room(s.room);
        let mut out = format!("{}. {}", room.name, room.description);
        for (i, loc) in s.locations.iter().enumerate() {
            if *loc == Location::Room(s.room) {
                let o = ObjectId(i as u16);
                out.push_str(&format!(" There is {} here.", self.with_article(o)));
                self.describe_contents(s, o, &mut out);
            }
        }
        out
    }

    fn describe_inventory(&self, s: &GameState) -> String {
        if s.inventory.is_empty() {
            "You are empty-handed.".into()
        } else {
            format!("You are carrying {}.", self.list(&s.inventory))
        }
    }

    fn describe_object(&self, s: &GameState, o: ObjectId) -> String {
        let obj = self.world.object(o);
        let mut out = obj.description.clone();
        if let Some(open) = self.flag(s, obj.open_flag) {
            out.push_str(if open { " It is open." } else { " It is closed." });
        }
        if let Some(lit) = self.flag(s, obj.lit_flag) {
            out.push_str(if lit { " It is on." } else { " It is off." });
        }
        self.describe_contents(s, o, &mut out);
        out
    }
}

fn classify(pattern: &str, world: &WorldSpec) -> Verb {
    let vocab = &world.vocab;
    match pattern {
        "look" | "l" => Verb::Look,
        "inventory" | "i" => Verb::Inventory,
        "go __" | "walk __" => Verb::Go,
        "open __" => Verb::Open,
        "close __" => Verb::Close,
        "take __" | "get __" | "pick up __" => Verb::Take,
        "drop __" => Verb::Drop,
        "examine __" | "x __" | "look at __" => Verb::Examine,
        "read __" => Verb::Read,
        "turn on __" | "light __" => Verb::TurnOn,
        "turn off __" | "extinguish __" => Verb::TurnOff,
        "eat __" => Verb::Eat,
        "take __ from __" | "get __ from __" => Verb::TakeFrom,
        "put __ in __" => Verb::PutIn,
        single if !single.contains(' ') => match vocab.lookup(single) {
            Some(w) if vocab.tag(w) == crate::action::Tag::Direction => Verb::Move(w),
            _ => Verb::Unknown,
        },
        _ => Verb::Unknown,
    }
}

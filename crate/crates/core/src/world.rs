//! Declarative world description and its loader.
//!
//! Worlds are TOML documents with the sections `rooms`, `objects`, `rewards`,
//! `hazards`, `templates`, `vocabulary`, `start_room` and `max_steps`. Loading
//! resolves every string reference to a dense index and validates the world;
//! each error carries the document path of the offending entry.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::action::{Tag, Template, TemplateId, Vocabulary, WordId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoomId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlagId(pub u16);

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("dangling reference at {path}: {target:?} is not declared")]
    Dangling { path: String, target: String },
    #[error("duplicate id at {path}: {id:?}")]
    Duplicate { path: String, id: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl WorldError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        WorldError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    fn dangling(path: impl Into<String>, target: impl Into<String>) -> Self {
        WorldError::Dangling {
            path: path.into(),
            target: target.into(),
        }
    }

    fn duplicate(path: impl Into<String>, id: impl Into<String>) -> Self {
        WorldError::Duplicate {
            path: path.into(),
            id: id.into(),
        }
    }

    /// Document path of the offending entry.
    pub fn path(&self) -> &str {
        match self {
            WorldError::Schema { path, .. }
            | WorldError::Dangling { path, .. }
            | WorldError::Duplicate { path, .. }
            | WorldError::Io { path, .. } => path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Room {
    pub id: String,
    pub name: String,
    pub description: String,
    /// Direction word → target, sorted by direction word id.
    pub exits: Vec<(WordId, RoomId)>,
    pub dark: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Room(RoomId),
    Inventory,
    Inside(ObjectId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Object {
    pub id: String,
    pub noun: WordId,
    pub adjectives: Vec<WordId>,
    pub location: Location,
    pub portable: bool,
    pub light_source: bool,
    pub container: bool,
    pub openable: bool,
    pub description: String,
    pub text: Option<String>,
    pub open_flag: Option<FlagId>,
    pub lit_flag: Option<FlagId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlagKind {
    Open,
    Lit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flag {
    /// `<object>-open` or `<object>-lit`.
    pub name: String,
    pub object: ObjectId,
    pub kind: FlagKind,
    pub initial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    EnterRoom(RoomId),
    Take(ObjectId),
    Flag(FlagId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reward {
    pub condition: Condition,
    pub points: i64,
    /// Firing this reward ends the game.
    pub is_final: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hazard {
    pub room: RoomId,
    pub requires_light: bool,
    pub penalty: i64,
}

/// A validated world. Every cross-reference is an index into a sibling list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldSpec {
    pub rooms: Vec<Room>,
    pub objects: Vec<Object>,
    pub flags: Vec<Flag>,
    pub rewards: Vec<Reward>,
    pub hazards: Vec<Hazard>,
    pub templates: Vec<Template>,
    pub vocab: Vocabulary,
    pub start_room: RoomId,
    pub max_steps: u32,
}

impl WorldSpec {
    pub fn from_toml(doc: &str) -> Result<Self, WorldError> {
        let file: WorldFile = toml::from_str(doc).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_else(|| "document".into());
            WorldError::schema(path, e.message().to_string())
        })?;
        file.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&doc)
    }

    pub fn room_by_id(&self, id: &str) -> Option<RoomId> {
        self.rooms
            .iter()
            .position(|r| r.id == id)
            .map(|i| RoomId(i as u16))
    }

    pub fn object_by_id(&self, id: &str) -> Option<ObjectId> {
        self.objects
            .iter()
            .position(|o| o.id == id)
            .map(|i| ObjectId(i as u16))
    }

    pub fn object_by_noun(&self, noun: WordId) -> Option<ObjectId> {
        self.objects
            .iter()
            .position(|o| o.noun == noun)
            .map(|i| ObjectId(i as u16))
    }

    pub fn room(&self, id: RoomId) -> &Room {
        &self.rooms[id.0 as usize]
    }

    pub fn object(&self, id: ObjectId) -> &Object {
        &self.objects[id.0 as usize]
    }

    pub fn template_id(&self, pattern: &str) -> Option<TemplateId> {
        self.templates
            .iter()
            .find(|t| t.pattern() == pattern)
            .map(|t| t.id)
    }

    /// Sum of all positive reward points.
    pub fn max_score(&self) -> i64 {
        self.rewards.iter().map(|r| r.points.max(0)).sum()
    }

    pub fn hazard(&self, room: RoomId) -> Option<&Hazard> {
        self.hazards.iter().find(|h| h.room == room)
    }
}

// ---- file format ----------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    start_room: String,
    max_steps: u32,
    templates: Vec<String>,
    vocabulary: VocabularyFile,
    rooms: Vec<RoomFile>,
    objects: Vec<ObjectFile>,
    #[serde(default)]
    rewards: Vec<RewardFile>,
    #[serde(default)]
    hazards: Vec<HazardFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    #[serde(default)]
    verb: Vec<String>,
    #[serde(default)]
    preposition: Vec<String>,
    #[serde(default)]
    direction: Vec<String>,
    #[serde(default)]
    noun: Vec<String>,
    #[serde(default)]
    proper_noun: Vec<String>,
    #[serde(default)]
    adjective: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomFile {
    id: String,
    name: String,
    description: String,
    #[serde(default)]
    exits: BTreeMap<String, String>,
    #[serde(default)]
    dark: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    id: String,
    noun: String,
    #[serde(default)]
    adjectives: Vec<String>,
    location: String,
    #[serde(default)]
    portable: bool,
    #[serde(default)]
    light_source: bool,
    #[serde(default)]
    lit: bool,
    #[serde(default)]
    container: bool,
    #[serde(default)]
    openable: bool,
    #[serde(default)]
    open: bool,
    description: String,
    text: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum ConditionFile {
    EnterRoom(String),
    Take(String),
    Flag(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardFile {
    points: i64,
    condition: ConditionFile,
    #[serde(default, rename = "final")]
    is_final: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HazardFile {
    room: String,
    #[serde(default = "yes")]
    requires_light: bool,
    penalty: i64,
}

fn yes() -> bool {
    true
}

impl WorldFile {
    fn resolve(self) -> Result<WorldSpec, WorldError> {
        let vocab = self.vocabulary.resolve()?;

        if self.rooms.is_empty() {
            return Err(WorldError::schema("rooms", "at least one room is required"));
        }
        if self.max_steps == 0 {
            return Err(WorldError::schema("max_steps", "must be positive"));
        }

        let mut room_ids = HashMap::new();
        for (i, r) in self.rooms.iter().enumerate() {
            if r.id.is_empty() {
                return Err(WorldError::schema(format!("rooms[{i}].id"), "empty id"));
            }
            if room_ids.insert(r.id.as_str(), RoomId(i as u16)).is_some() {
                return Err(WorldError::duplicate(format!("rooms[{i}].id"), &r.id));
            }
        }
        let mut object_ids = HashMap::new();
        for (i, o) in self.objects.iter().enumerate() {
            if o.id.is_empty() || o.id == "inventory" {
                return Err(WorldError::schema(
                    format!("objects[{i}].id"),
                    format!("invalid object id {:?}", o.id),
                ));
            }
            if room_ids.contains_key(o.id.as_str()) {
                return Err(WorldError::duplicate(format!("objects[{i}].id"), &o.id));
            }
            if object_ids.insert(o.id.as_str(), ObjectId(i as u16)).is_some() {
                return Err(WorldError::duplicate(format!("objects[{i}].id"), &o.id));
            }
        }

        let mut rooms = Vec::with_capacity(self.rooms.len());
        for (i, r) in self.rooms.iter().enumerate() {
            let mut exits = Vec::new();
            for (dir, target) in &r.exits {
                let path = format!("rooms[{i}].exits.{dir}");
                let w = vocab
                    .lookup(dir)
                    .filter(|w| vocab.tag(*w) == Tag::Direction)
                    .ok_or_else(|| WorldError::dangling(&path, dir))?;
                let t = room_ids
                    .get(target.as_str())
                    .ok_or_else(|| WorldError::dangling(&path, target))?;
                exits.push((w, *t));
            }
            exits.sort();
            rooms.push(Room {
                id: r.id.clone(),
                name: r.name.clone(),
                description: r.description.clone(),
                exits,
                dark: r.dark,
            });
        }

        let start_room = *room_ids
            .get(self.start_room.as_str())
            .ok_or_else(|| WorldError::dangling("start_room", &self.start_room))?;

        let mut objects = Vec::with_capacity(self.objects.len());
        let mut flags = Vec::new();
        let mut nouns = HashSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            let noun = vocab
                .lookup(&o.noun)
                .filter(|w| vocab.tag(*w).is_entity())
                .ok_or_else(|| WorldError::dangling(format!("objects[{i}].noun"), &o.noun))?;
            if !nouns.insert(noun) {
                return Err(WorldError::duplicate(format!("objects[{i}].noun"), &o.noun));
            }
            let mut adjectives = Vec::new();
            for (j, a) in o.adjectives.iter().enumerate() {
                let w = vocab
                    .lookup(a)
                    .filter(|w| vocab.tag(*w) == Tag::Adjective)
                    .ok_or_else(|| {
                        WorldError::dangling(format!("objects[{i}].adjectives[{j}]"), a)
                    })?;
                adjectives.push(w);
            }
            let location = if o.location == "inventory" {
                Location::Inventory
            } else if let Some(r) = room_ids.get(o.location.as_str()) {
                Location::Room(*r)
            } else if let Some(c) = object_ids.get(o.location.as_str()) {
                if !self.objects[c.0 as usize].container {
                    return Err(WorldError::schema(
                        format!("objects[{i}].location"),
                        format!("{:?} is not a container", o.location),
                    ));
                }
                Location::Inside(*c)
            } else {
                return Err(WorldError::dangling(
                    format!("objects[{i}].location"),
                    &o.location,
                ));
            };
            if o.openable && !o.container {
                return Err(WorldError::schema(
                    format!("objects[{i}].openable"),
                    "only containers can be opened",
                ));
            }
            if o.lit && !o.light_source {
                return Err(WorldError::schema(
                    format!("objects[{i}].lit"),
                    "only light sources can be lit",
                ));
            }
            let oid = ObjectId(i as u16);
            let open_flag = o.openable.then(|| {
                flags.push(Flag {
                    name: format!("{}-open", o.id),
                    object: oid,
                    kind: FlagKind::Open,
                    initial: o.open,
                });
                FlagId(flags.len() as u16 - 1)
            });
            let lit_flag = o.light_source.then(|| {
                flags.push(Flag {
                    name: format!("{}-lit", o.id),
                    object: oid,
                    kind: FlagKind::Lit,
                    initial: o.lit,
                });
                FlagId(flags.len() as u16 - 1)
            });
            objects.push(Object {
                id: o.id.clone(),
                noun,
                adjectives,
                location,
                portable: o.portable,
                light_source: o.light_source,
                container: o.container,
                openable: o.openable,
                description: o.description.clone(),
                text: o.text.clone(),
                open_flag,
                lit_flag,
            });
        }
        check_containment(&objects)?;

        let mut rewards = Vec::new();
        for (i, r) in self.rewards.iter().enumerate() {
            let path = format!("rewards[{i}].condition");
            let condition = match &r.condition {
                ConditionFile::EnterRoom(id) => Condition::EnterRoom(
                    *room_ids
                        .get(id.as_str())
                        .ok_or_else(|| WorldError::dangling(&path, id))?,
                ),
                ConditionFile::Take(id) => {
                    let o = *object_ids
                        .get(id.as_str())
                        .ok_or_else(|| WorldError::dangling(&path, id))?;
                    if !objects[o.0 as usize].portable {
                        return Err(WorldError::schema(&path, format!("{id:?} cannot be taken")));
                    }
                    Condition::Take(o)
                }
                ConditionFile::Flag(name) => Condition::Flag(
                    flags
                        .iter()
                        .position(|f| &f.name == name)
                        .map(|f| FlagId(f as u16))
                        .ok_or_else(|| WorldError::dangling(&path, name))?,
                ),
            };
            rewards.push(Reward {
                condition,
                points: r.points,
                is_final: r.is_final,
            });
        }

        let mut hazards: Vec<Hazard> = Vec::new();
        for (i, h) in self.hazards.iter().enumerate() {
            let path = format!("hazards[{i}].room");
            let room = *room_ids
                .get(h.room.as_str())
                .ok_or_else(|| WorldError::dangling(&path, &h.room))?;
            if hazards.iter().any(|x| x.room == room) {
                return Err(WorldError::duplicate(path, &h.room));
            }
            if h.penalty < 0 {
                return Err(WorldError::schema(
                    format!("hazards[{i}].penalty"),
                    "penalty is a magnitude and must be non-negative",
                ));
            }
            hazards.push(Hazard {
                room,
                requires_light: h.requires_light,
                penalty: h.penalty,
            });
        }

        if self.templates.is_empty() {
            return Err(WorldError::schema("templates", "at least one template is required"));
        }
        let mut templates = Vec::new();
        let mut patterns = HashSet::new();
        for (i, p) in self.templates.iter().enumerate() {
            let path = format!("templates[{i}]");
            let t = Template::parse(TemplateId(i as u16), p)
                .map_err(|m| WorldError::schema(&path, m))?;
            if !patterns.insert(t.pattern()) {
                return Err(WorldError::duplicate(&path, p));
            }
            if let Some(lit) = t.literals().find(|l| vocab.lookup(l).is_none()) {
                return Err(WorldError::dangling(&path, lit));
            }
            templates.push(t);
        }

        Ok(WorldSpec {
            rooms,
            objects,
            flags,
            rewards,
            hazards,
            templates,
            vocab,
            start_room,
            max_steps: self.max_steps,
        })
    }
}

impl VocabularyFile {
    fn resolve(&self) -> Result<Vocabulary, WorldError> {
        let sections: [(&str, &Vec<String>, Tag); 6] = [
            ("verb", &self.verb, Tag::Verb),
            ("preposition", &self.preposition, Tag::Preposition),
            ("direction", &self.direction, Tag::Direction),
            ("noun", &self.noun, Tag::Noun),
            ("proper_noun", &self.proper_noun, Tag::ProperNoun),
            ("adjective", &self.adjective, Tag::Adjective),
        ];
        let mut entries = Vec::new();
        for (name, words, tag) in sections {
            for (i, w) in words.iter().enumerate() {
                let ok = !w.is_empty()
                    && w.chars().all(|c| c.is_ascii_lowercase() || c == '-' || c == '\'');
                if !ok {
                    return Err(WorldError::schema(
                        format!("vocabulary.{name}[{i}]"),
                        format!("{w:?} is not a lowercase word"),
                    ));
                }
                entries.push((w.clone(), tag));
            }
        }
        Vocabulary::new(entries).map_err(|w| WorldError::duplicate("vocabulary", w))
    }
}

fn check_containment(objects: &[Object]) -> Result<(), WorldError> {
    for (i, _) in objects.iter().enumerate() {
        let mut cur = objects[i].location;
        let mut hops = 0;
        while let Location::Inside(c) = cur {
            hops += 1;
            if hops > objects.len() {
                return Err(WorldError::schema(
                    format!("objects[{i}].location"),
                    "containment cycle",
                ));
            }
            cur = objects[c.0 as usize].location;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::MINIGRUE;

    #[test]
    fn minigrue_loads() {
        let w = WorldSpec::from_toml(MINIGRUE).unwrap();
        assert_eq!(w.rooms.len(), 5);
        assert_eq!(w.objects.len(), 6);
        assert_eq!(w.rooms[w.start_room.0 as usize].id, "west-of-house");
        assert_eq!(w.max_score(), 75);
        assert_eq!(w.flags.len(), 2);
    }

    #[test]
    fn dangling_exit_is_reported_with_path() {
        let doc = MINIGRUE.replace(
            "exits = { east = \"kitchen\" }",
            "exits = { east = \"attic\" }",
        );
        match WorldSpec::from_toml(&doc) {
            Err(e @ WorldError::Dangling { .. }) => {
                assert_eq!(e.path(), "rooms[0].exits.east");
            }
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn empty_rooms_is_schema_violation() {
        let doc = r#"
            start_room = "a"
            max_steps = 10
            templates = ["look"]
            rooms = []
            objects = []
            [vocabulary]
            verb = ["look"]
        "#;
        assert!(matches!(
            WorldSpec::from_toml(doc),
            Err(WorldError::Schema { ref path, .. }) if path == "rooms"
        ));
    }

    #[test]
    fn duplicate_object_id() {
        let doc = MINIGRUE.replace("id = \"sceptre\"", "id = \"egg\"");
        assert!(matches!(
            WorldSpec::from_toml(&doc),
            Err(WorldError::Duplicate { ref id, .. }) if id == "egg"
        ));
    }

    #[test]
    fn reward_referencing_unknown_room() {
        let doc = MINIGRUE.replace("enter_room = \"cellar\"", "enter_room = \"attic\"");
        assert!(matches!(
            WorldSpec::from_toml(&doc),
            Err(WorldError::Dangling { ref target, .. }) if target == "attic"
        ));
    }

    #[test]
    fn unknown_field_is_schema_violation() {
        let doc = MINIGRUE.replace("max_steps = 1000", "max_steps = 1000\nlives = 3");
        assert!(matches!(WorldSpec::from_toml(&doc), Err(WorldError::Schema { .. })));
    }
}

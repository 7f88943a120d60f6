//! Rule-based knowledge-graph state tracking.
//!
//! The graph is rebuilt incrementally from each observation:
//!
//! 1. `⟨you, in, room⟩` points at the current room (replaced, never duplicated).
//! 2. Interactive objects named in the observation are linked to the room with
//!    `⟨room, has, obj⟩`. Candidates are the noun and adjective tokens of the
//!    text; interactive ones are those an `examine` probe accepts.
//! 3. Carried objects are linked with `⟨you, has, obj⟩` and lose their room
//!    links.
//! 4. A movement that changed rooms adds `⟨from, direction, to⟩`.
//!
//! Adjectives directly preceding an interactive noun add `⟨obj, is, adj⟩`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::action::{Tag, TemplateAction, Vocabulary, WordId};
use crate::engine::{Engine, GameState, Verb, FAILURE_TEXT};
use crate::snapshot::digest;
use crate::world::Location;

pub const YOU: &str = "you";
pub const IN: &str = "in";
pub const HAS: &str = "has";
pub const IS: &str = "is";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(s: impl Into<String>, r: impl Into<String>, o: impl Into<String>) -> Self {
        Triple {
            subject: s.into(),
            relation: r.into(),
            object: o.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    current_room: Option<String>,
}

/// Entity words present in a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphMask(pub BTreeSet<WordId>);

impl GraphMask {
    pub fn contains(&self, w: WordId) -> bool {
        self.0.contains(&w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = WordId> + '_ {
        self.0.iter().copied()
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn triples(&self) -> &BTreeSet<Triple> {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, s: &str, r: &str, o: &str) -> bool {
        self.triples.contains(&Triple::new(s, r, o))
    }

    pub fn current_room(&self) -> Option<&str> {
        self.current_room.as_deref()
    }

    pub fn insert(&mut self, t: Triple) -> bool {
        self.triples.insert(t)
    }

    fn remove_where(&mut self, pred: impl Fn(&Triple) -> bool) {
        self.triples.retain(|t| !pred(t));
    }

    /// One tab-separated triple per line, in canonical order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(out, "{}\t{}\t{}", t.subject, t.relation, t.object);
        }
        out
    }

    /// Digest of the canonical dump; independent of insertion order.
    pub fn canonical_hash(&self) -> u64 {
        digest(self.dump().as_bytes())
    }
}

/// Lowercased word tokens of an observation.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
}

/// Noun, proper-noun and adjective tokens in order of first appearance.
pub fn extract_candidates(text: &str, vocab: &Vocabulary) -> Vec<WordId> {
    let mut seen = BTreeSet::new();
    tokenize(text)
        .filter_map(|t| vocab.lookup(&t))
        .filter(|w| {
            matches!(vocab.tag(*w), Tag::Noun | Tag::ProperNoun | Tag::Adjective)
        })
        .filter(|w| seen.insert(*w))
        .collect()
}

/// `(adjective, noun)` pairs where the adjective run directly precedes the noun.
pub fn adjective_links(text: &str, vocab: &Vocabulary) -> Vec<(WordId, WordId)> {
    let words: Vec<Option<WordId>> = tokenize(text).map(|t| vocab.lookup(&t)).collect();
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let Some(noun) = *w else { continue };
        if !vocab.tag(noun).is_entity() {
            continue;
        }
        for prev in words[..i].iter().rev() {
            match prev {
                Some(a) if vocab.tag(*a) == Tag::Adjective => out.push((*a, noun)),
                _ => break,
            }
        }
    }
    out
}

/// Candidates for which `examine X` does not fail. Probes run on copies of
/// `state`; the caller's state is untouched.
pub fn filter_interactive(candidates: &[WordId], engine: &Engine, state: &GameState) -> Vec<WordId> {
    if engine.is_done(state) {
        return Vec::new();
    }
    let Some(examine) = engine.template_for(Verb::Examine) else {
        return Vec::new();
    };
    candidates
        .iter()
        .copied()
        .filter(|w| {
            let probe = TemplateAction::new(examine, vec![*w]);
            matches!(engine.step(state, &probe), Ok((_, obs)) if obs.text != FAILURE_TEXT)
        })
        .collect()
}

/// Applies the four update rules for `observation`, which `prev_action` (if
/// any) produced, leading to `state`.
pub fn update_graph(
    kg: &KnowledgeGraph,
    observation: &str,
    prev_action: Option<&TemplateAction>,
    engine: &Engine,
    state: &GameState,
) -> KnowledgeGraph {
    let world = engine.world();
    let vocab = &world.vocab;
    let room = world.room(state.room).id.clone();
    let prev_room = kg.current_room.clone();
    let mut g = kg.clone();

    // (1)
    g.remove_where(|t| t.subject == YOU && t.relation == IN);
    g.insert(Triple::new(YOU, IN, &room));
    g.current_room = Some(room.clone());

    // (2)
    let interactive = filter_interactive(&extract_candidates(observation, vocab), engine, state);
    let carried = |w: WordId| {
        world
            .object_by_noun(w)
            .is_some_and(|o| state.locations[o.0 as usize] == Location::Inventory)
    };
    for &w in &interactive {
        if !carried(w) {
            g.insert(Triple::new(&room, HAS, vocab.word(w)));
        }
    }
    for (adj, noun) in adjective_links(observation, vocab) {
        if interactive.contains(&noun) {
            g.insert(Triple::new(vocab.word(noun), IS, vocab.word(adj)));
        }
    }

    // (3)
    g.remove_where(|t| t.subject == YOU && t.relation == HAS);
    for o in &state.inventory {
        let noun = vocab.word(world.object(*o).noun).to_string();
        g.remove_where(|t| t.relation == HAS && t.object == noun);
        g.insert(Triple::new(YOU, HAS, noun));
    }

    // (4)
    if let (Some(action), Some(from)) = (prev_action, prev_room) {
        if let Some(dir) = engine.movement(action) {
            if from != room {
                g.insert(Triple::new(from, vocab.word(dir), &room));
            }
        }
    }
    g
}

/// Entity words appearing anywhere in the graph.
pub fn graph_mask(kg: &KnowledgeGraph, vocab: &Vocabulary) -> GraphMask {
    let mut mask = BTreeSet::new();
    for t in &kg.triples {
        for part in [&t.subject, &t.relation, &t.object] {
            if let Some(w) = vocab.lookup(part) {
                if vocab.tag(w).is_entity() {
                    mask.insert(w);
                }
            }
        }
    }
    GraphMask(mask)
}

/// Graph and state together, advanced one observation at a time.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub state: GameState,
    pub kg: KnowledgeGraph,
    pub text: String,
}

impl Tracker {
    pub fn reset(engine: &Engine, seed: u64) -> Self {
        let (state, obs) = engine.reset(seed);
        let kg = update_graph(&KnowledgeGraph::new(), &obs.text, None, engine, &state);
        Tracker {
            state,
            kg,
            text: obs.text,
        }
    }

    pub fn step(
        &mut self,
        engine: &Engine,
        action: &TemplateAction,
    ) -> Result<crate::engine::Observation, crate::engine::EngineError> {
        let (state, obs) = engine.step(&self.state, action)?;
        self.kg = update_graph(&self.kg, &obs.text, Some(action), engine, &state);
        self.state = state;
        self.text.clone_from(&obs.text);
        Ok(obs)
    }

    /// Replays `actions` from reset.
    pub fn replay(
        engine: &Engine,
        actions: &[TemplateAction],
    ) -> Result<Self, crate::engine::EngineError> {
        let mut t = Tracker::reset(engine, 0);
        for a in actions {
            t.step(engine, a)?;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::minigrue;

    fn names(vocab: &Vocabulary, ws: &[WordId]) -> Vec<String> {
        ws.iter().map(|w| vocab.word(*w).to_string()).collect()
    }

    #[test]
    fn candidates_from_mailbox_sentence() {
        let w = minigrue();
        let c = extract_candidates("There is a small mailbox here.", &w.vocab);
        assert_eq!(names(&w.vocab, &c), ["small", "mailbox"]);
        assert!(extract_candidates("", &w.vocab).is_empty());
    }

    #[test]
    fn house_is_not_interactive() {
        let w = minigrue();
        let e = Engine::new(w);
        let (s, _) = e.reset(0);
        let v = &e.world().vocab;
        let c = vec![v.lookup("mailbox").unwrap(), v.lookup("house").unwrap()];
        let before = e.state_hash(&s);
        let kept = filter_interactive(&c, &e, &s);
        assert_eq!(names(v, &kept), ["mailbox"]);
        assert_eq!(e.state_hash(&s), before);
        assert!(filter_interactive(&[], &e, &s).is_empty());
    }

    #[test]
    fn order_independent_hash() {
        let mut a = KnowledgeGraph::new();
        let mut b = KnowledgeGraph::new();
        let ts = [
            Triple::new("you", "in", "kitchen"),
            Triple::new("kitchen", "down", "cellar"),
            Triple::new("you", "has", "lamp"),
        ];
        for t in &ts {
            a.insert(t.clone());
        }
        for t in ts.iter().rev() {
            b.insert(t.clone());
        }
        assert_eq!(a.canonical_hash(), b.canonical_hash());
        assert_eq!(
            KnowledgeGraph::new().canonical_hash(),
            KnowledgeGraph::new().canonical_hash()
        );
        b.insert(Triple::new("lamp", "is", "brass"));
        assert_ne!(a.canonical_hash(), b.canonical_hash());
    }

    #[test]
    fn mask_holds_entities_only() {
        let w = minigrue();
        assert!(graph_mask(&KnowledgeGraph::new(), &w.vocab).is_empty());
        let mut g = KnowledgeGraph::new();
        g.insert(Triple::new("you", "has", "lamp"));
        g.insert(Triple::new("lamp", "is", "brass"));
        let m = graph_mask(&g, &w.vocab);
        assert!(m.contains(w.vocab.lookup("lamp").unwrap()));
        assert!(!m.contains(w.vocab.lookup("brass").unwrap()));
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn take_moves_link_to_you() {
        let e = Engine::new(minigrue());
        let mut t = Tracker::reset(&e, 0);
        assert!(t.kg.contains("west-of-house", "has", "egg"));
        t.step(&e, &e.parse("take egg").unwrap()).unwrap();
        assert!(t.kg.contains("you", "has", "egg"));
        assert!(!t.kg.contains("west-of-house", "has", "egg"));
    }

    #[test]
    fn navigation_triple() {
        let e = Engine::new(minigrue());
        let mut t = Tracker::reset(&e, 0);
        for cmd in ["east", "north", "take lamp", "turn on lamp", "south", "go down"] {
            t.step(&e, &e.parse(cmd).unwrap()).unwrap();
        }
        assert!(t.kg.contains("kitchen", "down", "cellar"));
        assert!(!t.kg.contains("cellar", "up", "kitchen"));
        assert!(t.kg.contains("you", "in", "cellar"));
    }
}

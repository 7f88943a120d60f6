//! Template action space.
//!
//! An action is a verb template with up to two blanks (`get __ from __`) plus
//! one vocabulary word per blank. This module owns the vocabulary, template
//! parsing, rendering of actions to text and back, the closed-form size of the
//! space, and a brute-force oracle for the admissible subset at a state.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, GameState};

/// Dense index into a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordId(pub u32);

/// Index into the template list of a world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemplateId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Verb,
    Preposition,
    Direction,
    Noun,
    ProperNoun,
    Adjective,
}

impl Tag {
    /// Nouns and proper nouns: the words that name entities.
    pub fn is_entity(self) -> bool {
        matches!(self, Tag::Noun | Tag::ProperNoun)
    }

    /// Tags the admissible-action oracle draws blank fills from.
    pub fn is_fill_candidate(self) -> bool {
        matches!(
            self,
            Tag::Noun | Tag::ProperNoun | Tag::Adjective | Tag::Direction
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActionError {
    #[error("unknown template id {0}")]
    UnknownTemplate(u16),
    #[error("unknown word id {0}")]
    UnknownWord(u32),
    #[error("template {template} takes {expected} fills, got {got}")]
    ArityMismatch {
        template: u16,
        expected: usize,
        got: usize,
    },
    #[error("unrecognized verb in {0:?}")]
    UnrecognizedVerb(String),
    #[error("unknown word {word:?} in blank of {text:?}")]
    UnknownWordInBlank { word: String, text: String },
    #[error("no template matches {0:?}")]
    NoMatch(String),
}

/// Word list with one lexical tag per word. Ids are dense `0..len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    tags: Vec<Tag>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    /// Builds a vocabulary; returns the first duplicated surface form on failure.
    pub fn new<I, S>(entries: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (S, Tag)>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            tags: Vec::new(),
            index: HashMap::new(),
        };
        for (word, tag) in entries {
            let word: String = word.into();
            let id = WordId(vocab.words.len() as u32);
            if vocab.index.insert(word.clone(), id).is_some() {
                return Err(word);
            }
            vocab.words.push(word);
            vocab.tags.push(tag);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.0 as usize]
    }

    pub fn get(&self, id: WordId) -> Option<&str> {
        self.words.get(id.0 as usize).map(String::as_str)
    }

    pub fn tag(&self, id: WordId) -> Tag {
        self.tags[id.0 as usize]
    }

    pub fn ids(&self) -> impl Iterator<Item = WordId> + '_ {
        (0..self.words.len() as u32).map(WordId)
    }

    pub fn with_tag(&self, pred: impl Fn(Tag) -> bool) -> Vec<WordId> {
        self.ids().filter(|&w| pred(self.tag(w))).collect()
    }

    /// Noun and proper-noun ids in id order.
    pub fn entities(&self) -> Vec<WordId> {
        self.with_tag(Tag::is_entity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Literal(String),
    Blank,
}

pub const BLANK: &str = "__";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub id: TemplateId,
    pub tokens: Vec<Token>,
}

impl Template {
    /// Parses a whitespace-separated pattern where `__` marks a blank.
    pub fn parse(id: TemplateId, pattern: &str) -> Result<Self, String> {
        let tokens: Vec<Token> = pattern
            .split_whitespace()
            .map(|t| {
                if t == BLANK {
                    Token::Blank
                } else {
                    Token::Literal(t.to_lowercase())
                }
            })
            .collect();
        if tokens.is_empty() {
            return Err("empty template pattern".into());
        }
        if !matches!(tokens[0], Token::Literal(_)) {
            return Err(format!("template {pattern:?} must start with a verb"));
        }
        let t = Template { id, tokens };
        if t.arity() > 2 {
            return Err(format!("template {pattern:?} has more than two blanks"));
        }
        Ok(t)
    }

    pub fn arity(&self) -> usize {
        self.tokens.iter().filter(|t| **t == Token::Blank).count()
    }

    pub fn literals(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Literal(s) => Some(s.as_str()),
            Token::Blank => None,
        })
    }

    pub fn pattern(&self) -> String {
        self.tokens
            .iter()
            .map(|t| match t {
                Token::Literal(s) => s.as_str(),
                Token::Blank => BLANK,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn literal_count(&self) -> usize {
        self.tokens.len() - self.arity()
    }
}

/// A template plus its fills, the agent's unit of action.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemplateAction {
    pub template: TemplateId,
    pub fills: Vec<WordId>,
}

impl TemplateAction {
    pub fn new(template: TemplateId, fills: Vec<WordId>) -> Self {
        TemplateAction { template, fills }
    }

    pub fn bare(template: TemplateId) -> Self {
        TemplateAction {
            template,
            fills: Vec::new(),
        }
    }
}

impl fmt::Display for TemplateAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.template.0)?;
        for w in &self.fills {
            write!(f, ":{}", w.0)?;
        }
        Ok(())
    }
}

/// Checks ids and arity of `action` against the template list.
pub fn check_action<'a>(
    action: &TemplateAction,
    vocab: &Vocabulary,
    templates: &'a [Template],
) -> Result<&'a Template, ActionError> {
    let template = templates
        .get(action.template.0 as usize)
        .ok_or(ActionError::UnknownTemplate(action.template.0))?;
    if template.arity() != action.fills.len() {
        return Err(ActionError::ArityMismatch {
            template: action.template.0,
            expected: template.arity(),
            got: action.fills.len(),
        });
    }
    if let Some(bad) = action.fills.iter().find(|w| vocab.get(**w).is_none()) {
        return Err(ActionError::UnknownWord(bad.0));
    }
    Ok(template)
}

/// Replaces blanks left to right with the fill surface forms.
pub fn render(
    action: &TemplateAction,
    vocab: &Vocabulary,
    templates: &[Template],
) -> Result<String, ActionError> {
    let template = check_action(action, vocab, templates)?;
    let mut fills = action.fills.iter();
    let words: Vec<&str> = template
        .tokens
        .iter()
        .map(|t| match t {
            Token::Literal(s) => s.as_str(),
            Token::Blank => vocab.word(*fills.next().expect("arity checked")),
        })
        .collect();
    Ok(words.join(" "))
}

/// Inverse of [`render`]. Among templates that match the whole text the one
/// with the most literal tokens wins, then the lowest id.
pub fn parse(
    text: &str,
    vocab: &Vocabulary,
    templates: &[Template],
) -> Result<TemplateAction, ActionError> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let Some(first) = tokens.first() else {
        return Err(ActionError::UnrecognizedVerb(text.to_string()));
    };
    let verb_known = templates
        .iter()
        .any(|t| matches!(&t.tokens[0], Token::Literal(v) if v == first));
    if !verb_known {
        return Err(ActionError::UnrecognizedVerb(text.to_string()));
    }

    let mut best: Option<(&Template, Vec<WordId>)> = None;
    let mut unknown_word: Option<String> = None;
    for template in templates {
        if template.tokens.len() != tokens.len() {
            continue;
        }
        let mut fills = Vec::new();
        let mut ok = true;
        for (pat, tok) in template.tokens.iter().zip(&tokens) {
            match pat {
                Token::Literal(lit) if lit == tok => {}
                Token::Literal(_) => {
                    ok = false;
                    break;
                }
                Token::Blank => match vocab.lookup(tok) {
                    Some(w) => fills.push(w),
                    None => {
                        unknown_word.get_or_insert_with(|| tok.clone());
                        ok = false;
                        break;
                    }
                },
            }
        }
        if !ok {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, _)) => template.literal_count() > b.literal_count(),
        };
        if better {
            best = Some((template, fills));
        }
    }
    match (best, unknown_word) {
        (Some((t, fills)), _) => Ok(TemplateAction::new(t.id, fills)),
        (None, Some(word)) => Err(ActionError::UnknownWordInBlank {
            word,
            text: text.to_string(),
        }),
        (None, None) => Err(ActionError::NoMatch(text.to_string())),
    }
}

/// Number of template actions: the sum over templates of `vocab_size^arity`.
pub fn action_space_size(arities: impl IntoIterator<Item = usize>, vocab_size: u64) -> u128 {
    arities
        .into_iter()
        .map(|a| (vocab_size as u128).pow(a as u32))
        .sum()
}

/// Every action of the space whose blanks are filled from `words`, in
/// canonical order (template id, then fill ids).
pub fn enumerate_actions(templates: &[Template], words: &[WordId]) -> Vec<TemplateAction> {
    let mut out = Vec::new();
    for t in templates {
        match t.arity() {
            0 => out.push(TemplateAction::bare(t.id)),
            1 => out.extend(words.iter().map(|&w| TemplateAction::new(t.id, vec![w]))),
            _ => {
                for &a in words {
                    for &b in words {
                        out.push(TemplateAction::new(t.id, vec![a, b]));
                    }
                }
            }
        }
    }
    out
}

/// Brute-force admissible set: actions that change the state hash or fire a
/// reward when stepped from `state`. Empty for finished states.
pub fn admissible_actions(engine: &Engine, state: &GameState) -> Vec<TemplateAction> {
    if engine.is_done(state) {
        return Vec::new();
    }
    let world = engine.world();
    let words = world.vocab.with_tag(Tag::is_fill_candidate);
    admissible_among(engine, state, enumerate_actions(&world.templates, &words))
}

/// Filters `candidates` down to those that change the world when stepped.
pub fn admissible_among(
    engine: &Engine,
    state: &GameState,
    candidates: impl IntoIterator<Item = TemplateAction>,
) -> Vec<TemplateAction> {
    if engine.is_done(state) {
        return Vec::new();
    }
    let before = engine.state_hash(state);
    candidates
        .into_iter()
        .filter(|a| match engine.step(state, a) {
            Ok((next, obs)) => obs.reward != 0 || engine.state_hash(&next) != before,
            Err(_) => false,
        })
        .collect()
}

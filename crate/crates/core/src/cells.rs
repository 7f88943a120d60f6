//! Cell-archive exploration.
//!
//! Every state the policy visits is mapped to a cell key. The archive keeps,
//! per key, the best score seen and the shortest action sequence from reset
//! that reaches it. Each iteration picks a cell with probability growing
//! with its score, returns to it by replaying its trajectory, lets the policy
//! act for a fixed number of steps and trains on that rollout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{TemplateAction, TemplateId, WordId};
use crate::agent::{a2c_update, Actor, AgentError, PolicyParams, Rollout, TrainingConfig, Variant};
use crate::engine::{Engine, EngineError};
use crate::kg::Tracker;
use crate::scalar::Scalar;
use crate::snapshot::digest;

pub const DEFAULT_CELL_STEP_SIZE: usize = 30;
pub const ARCHIVE_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey(pub u64);

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Order-sensitive combination of two digests.
pub fn combine(a: u64, b: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&a.to_le_bytes());
    bytes[8..].copy_from_slice(&b.to_le_bytes());
    digest(&bytes)
}

/// Graph hash combined with the state hash, or for the text-only variant
/// the digest of the last observation.
pub fn cell_key(variant: Variant, engine: &Engine, t: &Tracker) -> CellKey {
    match variant {
        Variant::WithKg => CellKey(combine(t.kg.canonical_hash(), engine.state_hash(&t.state))),
        Variant::TextOnly => CellKey(digest(t.text.as_bytes())),
    }
}

#[derive(Debug, Error)]
pub enum CellError {
    #[error("the archive is empty")]
    Empty,
    #[error("no cell with key {0}")]
    UnknownCell(CellKey),
    #[error("replaying cell {key} reached key {got_key} with score {got_score}, expected score {score}")]
    Divergence {
        key: CellKey,
        score: i64,
        got_key: CellKey,
        got_score: i64,
    },
    #[error("archive checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub key: CellKey,
    pub score: i64,
    /// Actions from reset reaching the cell with `score`.
    pub trajectory: Vec<TemplateAction>,
    pub visits: u64,
    /// Budget steps used when the cell was first found.
    pub discovered_at: u64,
    /// The game is over here; such cells are never selected.
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsert {
    New,
    Improved,
    Kept,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Archive {
    cells: BTreeMap<CellKey, Cell>,
    best_score: i64,
    pub expansions: u64,
}

impl Archive {
    /// An archive holding only the reset cell.
    pub fn seeded(actor: &Actor) -> Self {
        let t = Tracker::reset(&actor.engine, 0);
        let mut a = Archive {
            best_score: t.state.score,
            ..Archive::default()
        };
        let key = cell_key(actor.variant, &actor.engine, &t);
        a.upsert(key, t.state.score, Vec::new(), 0, actor.engine.is_done(&t.state));
        a
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn best_score(&self) -> i64 {
        self.best_score
    }

    pub fn get(&self, key: CellKey) -> Option<&Cell> {
        self.cells.get(&key)
    }

    /// Cells in key order.
    pub fn iter(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    /// Inserts a new cell, or replaces the record of an existing one when the
    /// score is higher, or equal with a shorter trajectory.
    pub fn upsert(
        &mut self,
        key: CellKey,
        score: i64,
        trajectory: Vec<TemplateAction>,
        step: u64,
        terminal: bool,
    ) -> Upsert {
        let first = self.cells.is_empty();
        let out = match self.cells.get_mut(&key) {
            None => {
                self.cells.insert(
                    key,
                    Cell {
                        key,
                        score,
                        trajectory,
                        visits: 0,
                        discovered_at: step,
                        terminal,
                    },
                );
                Upsert::New
            }
            Some(c) if score > c.score || (score == c.score && trajectory.len() < c.trajectory.len()) => {
                c.score = score;
                c.trajectory = trajectory;
                c.terminal = terminal;
                Upsert::Improved
            }
            Some(_) => Upsert::Kept,
        };
        self.best_score = if first { score } else { self.best_score.max(score) };
        out
    }

    /// Versioned binary dump: header, then per cell its key, score, visits,
    /// discovery step, terminal flag and trajectory as id lists.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![ARCHIVE_VERSION];
        out.extend(self.best_score.to_le_bytes());
        out.extend(self.expansions.to_le_bytes());
        out.extend((self.cells.len() as u32).to_le_bytes());
        for c in self.cells.values() {
            out.extend(c.key.0.to_le_bytes());
            out.extend(c.score.to_le_bytes());
            out.extend(c.visits.to_le_bytes());
            out.extend(c.discovered_at.to_le_bytes());
            out.push(c.terminal as u8);
            out.extend((c.trajectory.len() as u32).to_le_bytes());
            for a in &c.trajectory {
                out.extend(a.template.0.to_le_bytes());
                out.push(a.fills.len() as u8);
                for w in &a.fills {
                    out.extend(w.0.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CellError> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.take::<1>()?[0];
        if version != ARCHIVE_VERSION {
            return Err(CellError::Format(format!("unsupported version {version}")));
        }
        let best_score = i64::from_le_bytes(r.take()?);
        let expansions = u64::from_le_bytes(r.take()?);
        let n = u32::from_le_bytes(r.take()?);
        let mut cells = BTreeMap::new();
        for _ in 0..n {
            let key = CellKey(u64::from_le_bytes(r.take()?));
            let score = i64::from_le_bytes(r.take()?);
            let visits = u64::from_le_bytes(r.take()?);
            let discovered_at = u64::from_le_bytes(r.take()?);
            let terminal = r.take::<1>()?[0] != 0;
            let len = u32::from_le_bytes(r.take()?);
            let mut trajectory = Vec::with_capacity(len.min(1 << 16) as usize);
            for _ in 0..len {
                let template = TemplateId(u16::from_le_bytes(r.take()?));
                let k = r.take::<1>()?[0];
                let fills = (0..k)
                    .map(|_| Ok(WordId(u32::from_le_bytes(r.take()?))))
                    .collect::<Result<_, CellError>>()?;
                trajectory.push(TemplateAction::new(template, fills));
            }
            let cell = Cell {
                key,
                score,
                trajectory,
                visits,
                discovered_at,
                terminal,
            };
            if cells.insert(key, cell).is_some() {
                return Err(CellError::Format(format!("duplicate key {key}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(CellError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Archive {
            cells,
            best_score,
            expansions,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CellError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CellError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Human-readable table, best score first, then key.
    pub fn inspect(&self, engine: &Engine) -> String {
        let mut cells: Vec<_> = self.cells.values().collect();
        cells.sort_by(|a, b| b.score.cmp(&a.score).then(a.key.cmp(&b.key)));
        let mut out = format!(
            "{} cells, best score {}, {} expansions\n{:<16}  {:>6}  {:>6}  {:>5}  {:>9}  trajectory\n",
            self.cells.len(),
            self.best_score,
            self.expansions,
            "key",
            "score",
            "visits",
            "len",
            "found"
        );
        for c in cells {
            let traj: Vec<String> = c
                .trajectory
                .iter()
                .map(|a| engine.render(a).unwrap_or_else(|_| format!("{a}")))
                .collect();
            let _ = writeln!(
                out,
                "{}  {:>6}  {:>6}  {:>5}  {:>9}  {}{}",
                c.key,
                c.score,
                c.visits,
                c.trajectory.len(),
                c.discovered_at,
                traj.join(", "),
                if c.terminal { "  [end]" } else { "" }
            );
        }
        out
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CellError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| CellError::Format("truncated".into()))?;
        self.pos += N;
        Ok(s.try_into().expect("length checked"))
    }
}

/// Picks a non-terminal cell with weight `score - min + 1`, where `min` is
/// taken over the selectable cells.
pub fn select_cell<'a, R: Rng + ?Sized>(archive: &'a Archive, rng: &mut R) -> Result<&'a Cell, CellError> {
    let open: Vec<&Cell> = archive.cells.values().filter(|c| !c.terminal).collect();
    let min = open.iter().map(|c| c.score).min().ok_or(CellError::Empty)?;
    let weights: Vec<f64> = open.iter().map(|c| (c.score - min + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (c, w) in open.iter().zip(&weights) {
        if u < *w {
            return Ok(c);
        }
        u -= w;
    }
    Ok(open[open.len() - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub cell_step_size: usize,
    /// Agent steps across the whole run; replays are free.
    pub step_budget: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            cell_step_size: DEFAULT_CELL_STEP_SIZE,
            step_budget: 50_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Expansion {
    pub new_cells: usize,
    pub improved_cells: usize,
    pub steps: usize,
}

/// Returns to `key` by replay, runs the policy for up to `step_limit` steps
/// recording every live state reached, then trains once on the rollout.
/// Nothing is modified when the replay diverges or the update fails.
#[allow(clippy::too_many_arguments)]
pub fn expand_cell<S: Scalar, R: Rng + ?Sized>(
    archive: &mut Archive,
    key: CellKey,
    params: &mut PolicyParams<S>,
    actor: &Actor,
    train: &TrainingConfig<S>,
    step_limit: usize,
    steps_before: u64,
    rng: &mut R,
) -> Result<Expansion, CellError> {
    let engine = &actor.engine;
    let cell = archive.get(key).ok_or(CellError::UnknownCell(key))?;
    let mut t = Tracker::replay(engine, &cell.trajectory)?;
    let got = cell_key(actor.variant, engine, &t);
    if got != key || t.state.score != cell.score {
        return Err(CellError::Divergence {
            key,
            score: cell.score,
            got_key: got,
            got_score: t.state.score,
        });
    }
    let mut trajectory = cell.trajectory.clone();
    let mut found = Vec::new();
    let mut rollout = Rollout::default();
    while rollout.steps.len() < step_limit && !engine.is_done(&t.state) {
        let step = actor.act(params, &mut t, rng)?;
        trajectory.push(step.action.clone());
        rollout.steps.push(step);
        if t.state.alive {
            let at = steps_before + rollout.steps.len() as u64;
            let terminal = engine.is_done(&t.state);
            found.push((cell_key(actor.variant, engine, &t), t.state.score, trajectory.clone(), at, terminal));
        }
    }
    let steps = rollout.steps.len();
    if steps > 0 {
        if !engine.is_done(&t.state) {
            rollout.bootstrap = Some(actor.features(&t));
        }
        *params = a2c_update(params, &rollout, train)?.0;
    }

    let mut out = Expansion {
        steps,
        ..Expansion::default()
    };
    for (k, score, traj, at, terminal) in found {
        match archive.upsert(k, score, traj, at, terminal) {
            Upsert::New => out.new_cells += 1,
            Upsert::Improved => out.improved_cells += 1,
            Upsert::Kept => {}
        }
    }
    if let Some(c) = archive.cells.get_mut(&key) {
        c.visits += 1;
    }
    archive.expansions += 1;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploreTermination {
    Budget,
    MaxScore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreRecord {
    pub expansion: u64,
    pub steps: u64,
    pub cell: String,
    pub cell_score: i64,
    pub new_cells: usize,
    pub cells: usize,
    pub best_score: i64,
}

#[derive(Clone, Debug)]
pub struct ExploreRun<S> {
    pub records: Vec<ExploreRecord>,
    pub archive: Archive,
    pub params: PolicyParams<S>,
    pub termination: ExploreTermination,
    pub steps_used: u64,
}

/// Select, return, explore, train; until the budget is spent or a cell
/// reaches the world's maximum score.
pub fn train_goexplore<S: Scalar, R: Rng + ?Sized>(
    actor: &Actor,
    train: &TrainingConfig<S>,
    cfg: &ExploreConfig,
    initial: Option<PolicyParams<S>>,
    rng: &mut R,
    mut sink: impl FnMut(&ExploreRecord),
) -> Result<ExploreRun<S>, CellError> {
    let max_score = actor.engine.world().max_score();
    let mut params = initial.unwrap_or_else(|| actor.zero_params());
    let mut archive = Archive::seeded(actor);
    let mut used = 0u64;
    let mut records = Vec::new();
    let termination = loop {
        if archive.best_score() >= max_score {
            break ExploreTermination::MaxScore;
        }
        if used >= cfg.step_budget {
            break ExploreTermination::Budget;
        }
        let cell = select_cell(&archive, rng)?;
        let (key, cell_score) = (cell.key, cell.score);
        let limit = cfg.cell_step_size.min((cfg.step_budget - used) as usize);
        let e = expand_cell(&mut archive, key, &mut params, actor, train, limit, used, rng)?;
        used += e.steps as u64;
        let rec = ExploreRecord {
            expansion: archive.expansions,
            steps: used,
            cell: key.to_string(),
            cell_score,
            new_cells: e.new_cells,
            cells: archive.len(),
            best_score: archive.best_score(),
        };
        sink(&rec);
        records.push(rec);
    };
    Ok(ExploreRun {
        records,
        archive,
        params,
        termination,
        steps_used: used,
    })
}

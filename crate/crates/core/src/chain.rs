//! Policy chaining with backtracking.
//!
//! Training runs in segments. When the best episode score stops improving
//! for `patience` episodes the current policy is frozen together with the
//! action prefix that reached the best score, and a fresh policy trains from
//! the end of that prefix. If a fresh policy also stalls, the hand-off point
//! is moved one state earlier along the frozen trajectory, up to `n` times.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{admissible_actions, TemplateAction};
use crate::agent::{train_episode, Actor, AgentError, EpisodeStart, PolicyParams, TrainingConfig};
use crate::engine::{Engine, EngineError};
use crate::scalar::Scalar;
use crate::snapshot::StateBlob;

pub const DEFAULT_PATIENCE: usize = 35;
pub const DEFAULT_BUFFER_SIZE: usize = 40;
/// Probability that an episode opens with a uniformly drawn admissible action
/// at the anchor state.
pub const DEFAULT_FORCE_PROB: f64 = 0.3;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("cannot freeze an empty trajectory")]
    EmptyTrajectory,
    #[error("best trajectory does not extend the current anchor prefix")]
    AnchorMismatch,
    #[error("anchor replay reached score {got}, expected {expected}")]
    AnchorDrift { expected: i64, got: i64 },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Outcome of feeding one episode score to the detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    /// The score set a new best (the first score always does).
    pub new_best: bool,
    pub bottleneck: bool,
}

/// Counts episodes without a strictly higher score.
///
/// The first score only establishes the baseline, so it counts as a
/// non-improving episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BottleneckDetector {
    pub patience: usize,
    best: Option<i64>,
    since: usize,
}

impl BottleneckDetector {
    pub fn new(patience: usize) -> Self {
        BottleneckDetector {
            patience,
            best: None,
            since: 0,
        }
    }

    pub fn best(&self) -> Option<i64> {
        self.best
    }

    pub fn since_improvement(&self) -> usize {
        self.since
    }

    /// Restarts the patience window without touching the best score.
    pub fn rearm(&mut self) {
        self.since = 0;
    }

    pub fn observe(&mut self, score: i64) -> Verdict {
        let new_best = match self.best {
            Some(b) if score > b => {
                self.since = 0;
                true
            }
            Some(_) => {
                self.since += 1;
                false
            }
            None => {
                self.since = 1;
                true
            }
        };
        if new_best {
            self.best = Some(score);
        }
        Verdict {
            new_best,
            bottleneck: self.since >= self.patience,
        }
    }
}

/// A state on the frozen trajectory the anchor can fall back to.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub blob: StateBlob,
    pub admissible: Vec<TemplateAction>,
    pub score: i64,
    /// Actions from reset to this state.
    pub step: usize,
}

/// Oldest first; holds at most `capacity` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct BacktrackBuffer {
    pub capacity: usize,
    entries: VecDeque<BufferEntry>,
}

impl BacktrackBuffer {
    pub fn new(capacity: usize) -> Self {
        BacktrackBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, e: BufferEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn pop_newest(&mut self) -> Option<BufferEntry> {
        self.entries.pop_back()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment<S> {
    pub params: PolicyParams<S>,
    /// Actions this segment contributes to the anchor, after the previous
    /// segments' prefixes.
    pub prefix: Vec<TemplateAction>,
    pub score: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyChain<S> {
    pub segments: Vec<Segment<S>>,
    /// The policy being trained from the anchor.
    pub active: PolicyParams<S>,
    /// Admissible actions at the anchor state, for forced first actions.
    pub anchor_admissible: Vec<TemplateAction>,
}

impl<S: Scalar> PolicyChain<S> {
    pub fn new(active: PolicyParams<S>) -> Self {
        PolicyChain {
            segments: Vec::new(),
            active,
            anchor_admissible: Vec::new(),
        }
    }

    pub fn anchor_prefix(&self) -> Vec<TemplateAction> {
        self.segments.iter().flat_map(|s| s.prefix.iter().cloned()).collect()
    }

    pub fn anchor_len(&self) -> usize {
        self.segments.iter().map(|s| s.prefix.len()).sum()
    }

    pub fn anchor_score(&self) -> i64 {
        self.segments.last().map_or(0, |s| s.score)
    }

    /// Index of the segment currently training.
    pub fn active_index(&self) -> usize {
        self.segments.len()
    }
}

/// An episode worth freezing: every action from reset and the score after
/// each.
#[derive(Clone, Debug, PartialEq)]
pub struct BestTrajectory {
    pub actions: Vec<TemplateAction>,
    pub scores: Vec<i64>,
}

impl BestTrajectory {
    pub fn final_score(&self) -> i64 {
        self.scores.last().copied().unwrap_or(0)
    }
}

pub fn detect_bottleneck(detector: &mut BottleneckDetector, score: i64) -> Verdict {
    detector.observe(score)
}

/// Freezes the active policy with the part of `best` beyond the current
/// anchor, up to the first step that reached its final score, and starts a
/// fresh policy there. Returns the buffer of states leading to the new
/// anchor, restricted to the new segment.
pub fn freeze_and_restart<S: Scalar>(
    chain: &mut PolicyChain<S>,
    best: &BestTrajectory,
    engine: &Engine,
    buffer_size: usize,
) -> Result<BacktrackBuffer, ChainError> {
    if best.actions.is_empty() {
        return Err(ChainError::EmptyTrajectory);
    }
    let start = chain.anchor_len();
    let anchor = chain.anchor_prefix();
    if best.actions.len() <= start || best.actions[..start] != anchor[..] {
        return Err(ChainError::AnchorMismatch);
    }
    let target = best.final_score();
    let end = (start..best.actions.len())
        .find(|&i| best.scores[i] == target)
        .map(|i| i + 1)
        .ok_or(ChainError::EmptyTrajectory)?;

    let mut buffer = BacktrackBuffer::new(buffer_size);
    let first = start.max(end.saturating_sub(buffer_size));
    let (mut state, _) = engine.reset(0);
    for (i, a) in best.actions[..end].iter().enumerate() {
        if i >= first {
            buffer.push(BufferEntry {
                blob: engine.snapshot(&state),
                admissible: admissible_actions(engine, &state),
                score: state.score,
                step: i,
            });
        }
        state = engine.step(&state, a)?.0;
    }
    if state.score != target {
        return Err(ChainError::AnchorDrift {
            expected: target,
            got: state.score,
        });
    }

    let fresh = chain.active.zeros_like();
    chain.segments.push(Segment {
        params: std::mem::replace(&mut chain.active, fresh),
        prefix: best.actions[start..end].to_vec(),
        score: target,
    });
    chain.anchor_admissible = admissible_actions(engine, &state);
    Ok(buffer)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backtrack {
    /// The anchor now ends after `step` actions from reset.
    Moved { step: usize, score: i64 },
    Exhausted,
}

/// Moves the end of the last frozen segment back to the newest buffered
/// state and restarts the active policy from scratch.
pub fn backtrack<S: Scalar>(chain: &mut PolicyChain<S>, buffer: &mut BacktrackBuffer) -> Backtrack {
    let Some(entry) = buffer.pop_newest() else {
        return Backtrack::Exhausted;
    };
    let before = chain.anchor_len() - chain.segments.last().map_or(0, |s| s.prefix.len());
    let Some(last) = chain.segments.last_mut() else {
        return Backtrack::Exhausted;
    };
    last.prefix.truncate(entry.step - before);
    last.score = entry.score;
    chain.active = chain.active.zeros_like();
    chain.anchor_admissible = entry.admissible;
    Backtrack::Moved {
        step: entry.step,
        score: entry.score,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub patience: usize,
    pub buffer_size: usize,
    pub force_prob: f64,
    /// Agent steps across the whole run; replayed prefixes are free.
    pub step_budget: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            patience: DEFAULT_PATIENCE,
            buffer_size: DEFAULT_BUFFER_SIZE,
            force_prob: DEFAULT_FORCE_PROB,
            step_budget: 50_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Budget,
    Exhausted,
    MaxScore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainEvent {
    Improve,
    Freeze,
    Backtrack,
    Terminate,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub episode: u64,
    /// Budget steps used so far.
    pub steps: u64,
    pub score: i64,
    pub segment: usize,
    pub backtrack_depth: usize,
    pub events: Vec<ChainEvent>,
}

#[derive(Clone, Debug)]
pub struct ChainRun<S> {
    pub records: Vec<ChainRecord>,
    pub chain: PolicyChain<S>,
    pub termination: Termination,
    pub steps_used: u64,
}

/// Trains → detects → freezes → backtracks until the budget runs out, the
/// buffer is exhausted or the maximum score is reached. `sink` sees every
/// record as it is produced.
pub fn train_chained<S: Scalar, R: Rng + ?Sized>(
    actor: &Actor,
    train: &TrainingConfig<S>,
    cfg: &ChainConfig,
    initial: Option<PolicyParams<S>>,
    rng: &mut R,
    mut sink: impl FnMut(&ChainRecord),
) -> Result<ChainRun<S>, ChainError> {
    let engine = &actor.engine;
    let max_score = engine.world().max_score();
    let mut chain = PolicyChain::new(initial.unwrap_or_else(|| actor.zero_params()));
    let mut detector = BottleneckDetector::new(cfg.patience);
    let mut buffer = BacktrackBuffer::new(cfg.buffer_size);
    let mut best: Option<BestTrajectory> = None;
    // best found since the last freeze or backtrack
    let mut fresh_best = false;
    let mut depth = 0;
    let mut used = 0u64;
    let mut records: Vec<ChainRecord> = Vec::new();

    let termination = loop {
        if used >= cfg.step_budget {
            break Termination::Budget;
        }
        let prefix = chain.anchor_prefix();
        let anchor_len = prefix.len();
        let forced = if !chain.segments.is_empty()
            && !chain.anchor_admissible.is_empty()
            && rng.gen_bool(cfg.force_prob)
        {
            chain.anchor_admissible.choose(rng).cloned()
        } else {
            None
        };
        let limit = train
            .max_episode_steps
            .min((cfg.step_budget - used) as usize);
        let start = EpisodeStart { prefix, blob: None };
        let ep = train_episode(actor, &mut chain.active, train, &start, forced.as_ref(), limit, rng)?;
        if anchor_len > 0 && ep.scores[anchor_len - 1] != chain.anchor_score() {
            return Err(ChainError::AnchorDrift {
                expected: chain.anchor_score(),
                got: ep.scores[anchor_len - 1],
            });
        }
        used += ep.agent_steps as u64;

        let mut events = Vec::new();
        let verdict = detect_bottleneck(&mut detector, ep.final_score);
        if verdict.new_best {
            best = Some(BestTrajectory {
                actions: ep.actions,
                scores: ep.scores,
            });
            fresh_best = true;
            events.push(ChainEvent::Improve);
        }
        let mut stop = None;
        if ep.final_score >= max_score {
            stop = Some(Termination::MaxScore);
        } else if verdict.bottleneck {
            let progressed = fresh_best
                && best
                    .as_ref()
                    .is_some_and(|b| b.final_score() > chain.anchor_score() && !b.actions.is_empty());
            if progressed {
                let b = best.as_ref().expect("progress implies a best trajectory");
                buffer = freeze_and_restart(&mut chain, b, engine, cfg.buffer_size)?;
                depth = 0;
                events.push(ChainEvent::Freeze);
            } else if !chain.segments.is_empty() {
                match backtrack(&mut chain, &mut buffer) {
                    Backtrack::Moved { .. } => {
                        depth += 1;
                        events.push(ChainEvent::Backtrack);
                    }
                    Backtrack::Exhausted => stop = Some(Termination::Exhausted),
                }
            }
            fresh_best = false;
            detector.rearm();
        }
        if stop.is_none() && used >= cfg.step_budget {
            stop = Some(Termination::Budget);
        }
        if stop.is_some() {
            events.push(ChainEvent::Terminate);
        }
        let rec = ChainRecord {
            episode: records.len() as u64 + 1,
            steps: used,
            score: ep.final_score,
            segment: chain.active_index(),
            backtrack_depth: depth,
            events,
        };
        sink(&rec);
        records.push(rec);
        if let Some(t) = stop {
            break t;
        }
    };
    Ok(ChainRun {
        records,
        chain,
        termination,
        steps_used: used,
    })
}

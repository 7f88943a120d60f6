use rand::Rng;

use crate::action::{TemplateAction, WordId};
use crate::engine::Engine;
use crate::kg::{graph_mask, Tracker};
use crate::scalar::Scalar;
use crate::snapshot::StateBlob;

use super::{
    a2c_update, act, allowed_fills, AgentError, FeatureVector, Featurizer, PolicyParams,
    TrainingConfig, Variant,
};

/// One acted step, as stored for an update.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep<S> {
    pub features: FeatureVector<S>,
    pub action: TemplateAction,
    /// Fill candidates the object heads chose from.
    pub fills: Vec<WordId>,
    pub log_prob_template: S,
    pub log_prob_fills: Vec<S>,
    pub value: S,
    pub reward: S,
    pub done: bool,
}

/// Consecutive steps of one episode plus the features of the state after the
/// last step, used to bootstrap the return when the episode did not end.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout<S> {
    pub steps: Vec<TrajectoryStep<S>>,
    pub bootstrap: Option<FeatureVector<S>>,
}

/// Where an episode begins: a replayed action prefix, optionally checked
/// against a snapshot of the state it should reach.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStart {
    pub prefix: Vec<TemplateAction>,
    pub blob: Option<StateBlob>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode<S> {
    pub steps: Vec<TrajectoryStep<S>>,
    /// Every action from reset, prefix included.
    pub actions: Vec<TemplateAction>,
    /// Score after each entry of `actions`.
    pub scores: Vec<i64>,
    pub final_score: i64,
    pub done: bool,
}

/// Engine, featurizer and representation variant bundled for acting.
#[derive(Clone, Debug)]
pub struct Actor {
    pub engine: Engine,
    pub featurizer: Featurizer,
    pub variant: Variant,
    entities: Vec<WordId>,
}

impl Actor {
    pub fn new(engine: Engine, variant: Variant, bow_dim: usize) -> Self {
        let w = engine.world();
        let featurizer = Featurizer::new(&w.vocab, bow_dim, w.max_steps);
        let entities = w.vocab.entities();
        Actor {
            engine,
            featurizer,
            variant,
            entities,
        }
    }

    pub fn zero_params<S: Scalar>(&self) -> PolicyParams<S> {
        let w = self.engine.world();
        let arities = w.templates.iter().map(|t| t.arity() as u8).collect();
        PolicyParams::zeros(self.featurizer.dim(), arities, w.vocab.len())
    }

    pub fn features<S: Scalar>(&self, t: &Tracker) -> FeatureVector<S> {
        self.featurizer.encode(
            &t.text,
            &t.kg,
            &self.engine.world().vocab,
            t.state.score,
            t.state.steps,
            self.variant,
        )
    }

    /// Graph-masked fills for the KG variant; every entity word otherwise.
    pub fn fills(&self, t: &Tracker) -> Vec<WordId> {
        match self.variant {
            Variant::WithKg => allowed_fills(&graph_mask(&t.kg, &self.engine.world().vocab), &self.engine.world().vocab),
            Variant::TextOnly => self.entities.clone(),
        }
    }

    /// Replays the start prefix from reset, rebuilding the graph on the way.
    pub fn begin(&self, start: &EpisodeStart) -> Result<Tracker, AgentError> {
        Ok(self.begin_with_scores(start)?.0)
    }

    /// [`Actor::begin`] plus the score after each prefix action.
    pub fn begin_with_scores(&self, start: &EpisodeStart) -> Result<(Tracker, Vec<i64>), AgentError> {
        let mut t = Tracker::reset(&self.engine, 0);
        let mut scores = Vec::with_capacity(start.prefix.len());
        for a in &start.prefix {
            t.step(&self.engine, a)?;
            scores.push(t.state.score);
        }
        if let Some(blob) = &start.blob {
            if self.engine.restore(blob)? != t.state {
                return Err(AgentError::StartMismatch);
            }
        }
        Ok((t, scores))
    }

    /// Samples an action at `t`, steps the engine and updates the graph.
    pub fn act<S: Scalar, R: Rng + ?Sized>(
        &self,
        params: &PolicyParams<S>,
        t: &mut Tracker,
        rng: &mut R,
    ) -> Result<TrajectoryStep<S>, AgentError> {
        let features = self.features(t);
        let fills = self.fills(t);
        let d = act(params, &features, &fills, rng)?;
        let obs = t.step(&self.engine, &d.action)?;
        Ok(TrajectoryStep {
            features,
            action: d.action,
            fills,
            log_prob_template: d.log_prob_template,
            log_prob_fills: d.log_prob_fills,
            value: d.value,
            reward: S::lit(obs.reward as f64),
            done: obs.done,
        })
    }
}

/// Plays the policy from `start` until the game ends or `max_steps` agent
/// steps have been taken. No learning happens here.
pub fn run_episode<S: Scalar, R: Rng + ?Sized>(
    actor: &Actor,
    params: &PolicyParams<S>,
    start: &EpisodeStart,
    max_steps: usize,
    rng: &mut R,
) -> Result<Episode<S>, AgentError> {
    let (mut t, mut scores) = actor.begin_with_scores(start)?;
    let mut actions = start.prefix.clone();
    let mut steps = Vec::new();
    while steps.len() < max_steps && !actor.engine.is_done(&t.state) {
        let step = actor.act(params, &mut t, rng)?;
        actions.push(step.action.clone());
        scores.push(t.state.score);
        steps.push(step);
    }
    Ok(Episode {
        steps,
        actions,
        scores,
        final_score: t.state.score,
        done: actor.engine.is_done(&t.state),
    })
}

/// An episode played while learning: the action log from reset and its
/// score curve.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedEpisode {
    /// Every action from reset: prefix, forced action, then agent actions.
    pub actions: Vec<TemplateAction>,
    /// Score after each entry of `actions`.
    pub scores: Vec<i64>,
    pub final_score: i64,
    /// Steps charged to the budget (forced action included, prefix not).
    pub agent_steps: usize,
    pub updates: usize,
    pub done: bool,
}

/// Plays from `start` and applies an A2C update every `batch_size` steps and
/// at the end of the episode. A forced first action, if given, is played
/// but not trained on.
pub fn train_episode<S: Scalar, R: Rng + ?Sized>(
    actor: &Actor,
    params: &mut PolicyParams<S>,
    cfg: &TrainingConfig<S>,
    start: &EpisodeStart,
    forced: Option<&TemplateAction>,
    step_limit: usize,
    rng: &mut R,
) -> Result<TrainedEpisode, AgentError> {
    let (mut t, mut scores) = actor.begin_with_scores(start)?;
    let mut actions = start.prefix.clone();
    let mut agent_steps = 0;
    let mut updates = 0;
    if let Some(a) = forced {
        if step_limit > 0 && !actor.engine.is_done(&t.state) {
            t.step(&actor.engine, a)?;
            actions.push(a.clone());
            scores.push(t.state.score);
            agent_steps += 1;
        }
    }
    let mut batch = Rollout {
        steps: Vec::with_capacity(cfg.batch_size),
        bootstrap: None,
    };
    while agent_steps < step_limit && !actor.engine.is_done(&t.state) {
        let step = actor.act(params, &mut t, rng)?;
        actions.push(step.action.clone());
        scores.push(t.state.score);
        agent_steps += 1;
        batch.steps.push(step);
        let done = actor.engine.is_done(&t.state);
        if batch.steps.len() >= cfg.batch_size || done || agent_steps >= step_limit {
            batch.bootstrap = (!done).then(|| actor.features(&t));
            *params = a2c_update(params, &batch, cfg)?.0;
            updates += 1;
            batch.steps.clear();
        }
    }
    Ok(TrainedEpisode {
        actions,
        scores,
        final_score: t.state.score,
        agent_steps,
        updates,
        done: actor.engine.is_done(&t.state),
    })
}

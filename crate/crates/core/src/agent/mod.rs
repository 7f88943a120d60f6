//! Linear advantage actor-critic over template actions.
//!
//! State features are a hashed bag of words of the observation, an indicator
//! block over entity words in the knowledge graph, the score and the
//! normalized step. A template head picks the verb template; two object heads,
//! conditioned on the chosen template, pick blank fills restricted to the
//! graph mask; a value head estimates the return.

mod a2c;
mod features;
mod params;
mod policy;
mod rollout;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::scalar::Scalar;

pub use a2c::{a2c_update, gradient, loss, returns_and_advantages, LossStats};
pub use features::{FeatureVector, Featurizer, DEFAULT_BOW_DIM};
pub use params::{CheckpointError, PolicyParams};
pub use policy::{act, allowed_fills, template_distribution, Decision};
pub use rollout::{
    run_episode, train_episode, Actor, Episode, EpisodeStart, Rollout, TrainedEpisode,
    TrajectoryStep,
};

/// Which state representation an agent sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    WithKg,
    TextOnly,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite {head} logits: {detail}")]
    NonFinite { head: &'static str, detail: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss is not finite (policy {policy}, value {value}, entropy {entropy})")]
    NanLoss {
        policy: f64,
        value: f64,
        entropy: f64,
    },
    #[error("template needs fills but no fill candidates are available")]
    NoFillCandidates,
    #[error("start state does not match the replayed prefix")]
    StartMismatch,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Blob(#[from] crate::snapshot::BlobError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig<S> {
    pub learning_rate: S,
    pub gamma: S,
    pub entropy_coef: S,
    pub value_coef: S,
    /// Steps per update.
    pub batch_size: usize,
    /// Agent steps per episode, not counting replayed prefixes.
    pub max_episode_steps: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<S>,
}

impl<S: Scalar> Default for TrainingConfig<S> {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: S::lit(3e-3),
            gamma: S::lit(0.9),
            entropy_coef: S::lit(0.01),
            value_coef: S::lit(0.5),
            batch_size: 32,
            max_episode_steps: 100,
            max_grad_norm: Some(S::lit(5.0)),
        }
    }
}

impl<S: Scalar> TrainingConfig<S> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > S::zero() && self.gamma <= S::one()) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.max_episode_steps == 0 {
            return Err("max_episode_steps must be at least 1".into());
        }
        // written so that NaN is rejected too
        if self.learning_rate.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err("learning_rate must be positive".into());
        }
        Ok(())
    }
}

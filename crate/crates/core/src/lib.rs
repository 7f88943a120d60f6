//! Exploration workbench for text games with template action spaces.
//!
//! The crate is layered bottom-up:
//!
//! - [`world`], [`engine`], [`snapshot`]: a deterministic text-adventure
//!   engine driven by declarative world files.
//! - [`action`]: the template action space and admissible-action oracle.
//! - [`kg`]: rule-based knowledge-graph state tracking.
//! - [`agent`]: a linear advantage actor-critic over template actions, generic
//!   over the floating-point type.
//! - [`chain`] and [`cells`]: bottleneck-aware policy chaining with
//!   backtracking, and a cell-archive explorer keyed by graph + state.
//! - [`harness`]: the agent matrix, seeded runs and result tables.

pub mod action;
pub mod agent;
pub mod cells;
pub mod chain;
pub mod engine;
pub mod fixtures;
pub mod harness;
pub mod kg;
pub mod scalar;
pub mod snapshot;
pub mod world;

pub use action::{Tag, Template, TemplateAction, TemplateId, Vocabulary, WordId};
pub use engine::{Engine, GameState, Observation};
pub use kg::{GraphMask, KnowledgeGraph, Triple};
pub use scalar::Scalar;
pub use world::WorldSpec;

/// Double-precision policy parameters, the default used by the harness.
pub type PolicyParams = agent::PolicyParams<f64>;
/// Single-precision policy parameters.
pub type PolicyParamsF32 = agent::PolicyParams<f32>;
pub type FeatureVector = agent::FeatureVector<f64>;
pub type TrajectoryStep = agent::TrajectoryStep<f64>;
pub type TrainingConfig = agent::TrainingConfig<f64>;

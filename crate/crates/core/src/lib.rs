//! Offline reinforcement learning for continuous oxygen-flow control.
//!
//! The crate covers the whole pipeline:
//!
//! - [`cohort`]: patient records, CSV ingestion, interpolation onto a decision
//!   grid, MDP transition construction and a hazard-driven synthetic cohort
//!   generator that serves as ground truth.
//! - [`nn`]: a small dense/batch-norm network engine with analytic
//!   backpropagation and Adam.
//! - [`ddpg`]: offline deep deterministic policy gradient with target networks,
//!   polyak averaging and consistency-based early stopping.
//! - [`survival`]: elastic-net Cox proportional hazards, Breslow baseline,
//!   7-day mortality prediction and validation metrics.
//! - [`eval`]: leave-one-hospital-out cross-validation and the comparative
//!   report (mortality estimates, consistency, subgroups, curves, histograms).
//!
//! Data-parallel loops (generation, bootstrap, grid search, batch inference)
//! run on rayon when the `parallel` feature is enabled and sequentially
//! otherwise; results are identical either way.

pub mod cohort;
pub mod ddpg;
pub mod eval;
pub mod kv;
pub mod nn;
pub mod par;
pub mod survival;

pub use cohort::{
    FeatureKind, FeatureSchema, GeneratorConfig, Outcome, PatientRecord, Trajectory, Transition,
};
pub use ddpg::{ActorNet, CriticNet, TrainingConfig, TrainingLog};
pub use survival::{CoxModel, SurvivalSample};

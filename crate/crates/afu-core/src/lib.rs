//! Off-policy reinforcement learning with actor-free critic updates.
//!
//! This crate implements the AFU family of algorithms for continuous control:
//! a Q-function critic trained with clipped double value targets, a pair of
//! value/advantage networks that solve the continuous-action max-Q problem by
//! regression with conditional gradient scaling, and a squashed-Gaussian actor
//! with entropy-temperature adaptation. Two actor variants are provided:
//! `alpha` (plain stochastic actor) and `beta`, which adds a deterministic
//! guide head and a gradient projection that suppresses deceptive critic
//! gradients.
//!
//! Desk-scale environments (the one-state SFM bandit and a small point-reach
//! task), a replay buffer, the training loop, and finite-difference gradient
//! checking live here as well; the `afu` binary in the companion CLI crate
//! drives them.

pub mod actor;
pub mod critic;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod maxq;
pub mod nn;
pub mod replay;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
pub use trainer::{evaluate, train, AfuConfig, AfuVariant, EvalRecord, TrainOutcome, Trainer};

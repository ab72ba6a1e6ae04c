//! Goal-conditioned procedure planning lab.
//!
//! A plan is a short sequence of discrete actions that drives an environment
//! from a start observation to a goal observation. The pieces:
//!
//! * [`numcore`] — dense f64 arrays, a reverse-mode tape, Adam, and a
//!   finite-difference gradient checker. Everything downstream differentiates
//!   through this.
//! * [`attention`] — masked multi-head attention blocks (pre-norm).
//! * [`model`] — the planning model: a state encoder plus twin sequence
//!   models, one predicting the next action, one predicting the next latent
//!   state. Trained by teacher-forced imitation.
//! * [`planner`] — greedy decoding and discrepancy-constrained beam search
//!   over the learned model.
//! * [`envgen`] — synthetic task families with exact shortest-path oracles,
//!   expert trajectory sampling, and dataset serialization.
//! * [`eval`] — success rate / top-1 / mIoU / compounding-error metrics and
//!   the reference baselines (random, retrieval, MLP ablation).
//! * [`train`] — the imitation training loop with checkpointing.

pub mod attention;
pub mod envgen;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod planner;
pub mod train;

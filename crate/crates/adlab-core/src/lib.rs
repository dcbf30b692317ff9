//! Numerical laboratory for feature-learning dynamics of adversarial training
//! and adversarial distillation on synthetic patch data.
//!
//! The crate builds a binary-classification world in which every input is a
//! stack of `P` patches: one signal patch carrying the label along a fixed
//! coordinate direction, and `P - 1` Gaussian noise patches orthogonal to the
//! feature directions. A two-layer cubic-activation student, structurally
//! blind to one of the two feature directions, is trained full-batch against
//! per-step adversarial examples, while the quantities that drive the
//! learn-vs-memorize dichotomy (signal weights, noise coefficients, hitting
//! times) are tracked exactly.
//!
//! Modules follow the pipeline:
//!
//! * [`datagen`] — dataset generation, test sampling, concentration checks
//! * [`network`] — the student network: init, forward, analytic gradient
//! * [`teacher`] — margin-oracle teachers, soft labels, predictive entropy
//! * [`adversary`] — training-time signal attack, evaluation PGD, the
//!   memorized-patch attack
//! * [`training`] — full-batch gradient descent for both objectives
//! * [`instrument`] — noise-coefficient ledger, decomposition identity,
//!   hitting-time detectors
//! * [`experiments`] — dichotomy sweeps, subset identification, the
//!   teacher-entropy criterion
//!
//! Everything is deterministic given the configured seeds; repeated runs
//! produce bit-identical results. The crate is `no_std`-compatible (with
//! `alloc`); all I/O lives in the companion `adlab` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod adversary;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod instrument;
pub mod math;
pub mod network;
pub mod teacher;
pub mod training;

pub use error::{Error, Result};

//! Entropy-guided test-time reinforcement learning on a desk-scale policy.
//!
//! The crate pairs a tabular autoregressive softmax policy with a synthetic
//! digit-sum task and implements the full self-labelling training loop:
//! sampling (in parallel or as entropy-fork trees), majority-vote
//! pseudo-labels, group-relative advantages with optional entropy-aware
//! shaping, and a clipped policy-gradient update with exact gradients.
//!
//! Module map:
//!
//! - [`primitives`]: vocabulary, distributions, entropy, seeded streams
//! - [`policy`]: the tabular policy, sampling and log-likelihood gradients
//! - [`rollout`]: parallel and tree rollouts, token-budget accounting
//! - [`labeling`]: answer extraction, voting, reward estimators
//! - [`advantage`]: normalization, shaping, clipped surrogate
//! - [`tasks`]: prompt sets and greedy pass@1
//! - [`harness`]: configuration, training loop, metrics, checkpoints

pub mod advantage;
pub mod error;
pub mod harness;
pub mod labeling;
pub mod policy;
pub mod primitives;
pub mod rollout;
pub mod tasks;

pub use error::{Error, Result};

//! Compression-regularized policy training at desk scale.
//!
//! This crate trains a tiny autoregressive policy on synthetic arithmetic
//! tasks with a reward of the form
//!
//! ```text
//!     R(x, z, y) = r_acc(y) + beta * r_min(z)
//! ```
//!
//! where `r_acc` is a binary answer check and `r_min = -C(Z)` is the negative
//! code length of the reasoning trace under a frozen reference prior
//! (`C(Z) = sum_t -log Q(z_t | z_<t)`, in nats). Group-relative policy
//! optimization (GRPO) with group-standardized advantages does the policy
//! updates; every gradient is hand-derived reverse-mode, no ML framework.
//!
//! Module map:
//!
//! - [`binfmt`]   — checksummed binary container shared by artifact files
//! - [`vocab`]    — symbol table, tokenization, trace/answer splitting
//! - [`sample`]   — trace records, reward breakdowns, JSONL (de)serialization
//! - [`rng`]      — splittable counter-based random streams
//! - [`prior`]    — reference priors: uniform, add-k n-gram, length-Laplace,
//!   frozen policy snapshot; trace costs and minimality rewards
//! - [`verifier`] — epsilon-smoothed binary answer verification
//! - [`reward`]   — reward models combining verifier and prior
//! - [`tasks`]    — synthetic task families and brute-force oracle solvers
//! - [`policy`]   — tiny causal transformer with manual backprop
//! - [`trainer`]  — GRPO rollouts, advantage computation, Adam updates
//! - [`infotheory`] — exact enumeration worlds and variational-bound audits
//! - [`eval`]     — pass@1 evaluation, compression metrics, density profiles

pub mod binfmt;
pub mod eval;
pub mod infotheory;
pub mod policy;
pub mod prior;
pub mod reward;
pub mod rng;
pub mod sample;
pub mod tasks;
pub mod trainer;
pub mod verifier;
pub mod vocab;

pub use rng::StreamRng;
pub use sample::{RewardBreakdown, TraceSample};
pub use vocab::{TokenId, TokenSeq, Vocab};

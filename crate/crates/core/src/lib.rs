//! Restless-bandit scheduling of active and passive radars over smart
//! targets.
//!
//! Each target is a small two-action MDP ([`arm`]). [`sim`] steps `N` of
//! them under a budget of `K` active radars. [`policy`] holds the learned
//! index schedulers (ISQ, WIQL), the myopic Greedy baseline and the
//! Whittle-index oracle backed by [`whittle`]. [`harness`] runs seeded
//! multi-trial experiments and writes curves for plotting.

pub mod arm;
pub mod harness;
pub mod policy;
pub mod sim;
pub mod whittle;

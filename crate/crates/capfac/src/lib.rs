//! Workbench for the capacity-constrained facility location game.
//!
//! A single facility on the unit interval serves at most `k` of `n` agents.
//! Which agents are served is not chosen by the mechanism: it is the outcome
//! of the travel/stay subgame induced by the facility location, resolved at
//! its ex-post Nash equilibrium. This crate provides, in exact rational
//! arithmetic:
//!
//! - the induced subgame, its equilibrium resolver and a brute-force
//!   equilibrium enumerator that validates it ([`model`]),
//! - location mechanisms: generalized median mechanisms given by threshold
//!   tables, the named families (median, constant, dictator, snap-dictator),
//!   and arbitrary lookup tables on report grids ([`mechanism`]),
//! - social welfare, the sliding-window optimal location solver and
//!   per-instance approximation ratios ([`welfare`]),
//! - exhaustive grid audits for dominant-strategy incentive compatibility
//!   and the uncompromising property ([`audit`]),
//! - adversarial constructions, closed-form approximation bounds and
//!   certified worst-case ratio search ([`bounds`]),
//! - location-allocation mechanisms, allocation-anonymity checking and the
//!   exhaustive impossibility sweep ([`alloc`]).
//!
//! All domain types are immutable after construction and all operations are
//! pure functions, so callers may freely parallelize over instances. With
//! the default `parallel` feature the heavy scans use rayon internally;
//! results are bit-identical to the sequential fallback
//! (`--no-default-features`).

pub mod alloc;
pub mod audit;
pub mod bounds;
pub mod error;
pub mod mechanism;
pub mod model;
mod par;
pub mod rational;
pub mod rng;
pub mod welfare;

pub use error::Error;
pub use model::{Instance, Location};
pub use rational::Rational;

//! Desk-scale laboratory for post-training a tiny generative recommender.
//!
//! The crate covers the whole loop: synthetic worlds with known structure
//! ([`synth`]), offline reasoning-trace construction ([`datagen`]),
//! consistency-based example filtering ([`augment`]), prompt/target rendering
//! ([`prompting`]), a from-scratch decoder-only policy ([`policy`]),
//! supervised and group-relative policy-gradient training ([`train`]),
//! rule-based rewards ([`rewards`]), and leave-k-out ranking evaluation
//! ([`eval`]). Everything is deterministic given the run seed: random draws
//! come from named [`rng`] streams, never from a shared mutable generator.

pub mod augment;
pub mod catalog;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod policy;
pub mod prompting;
pub mod rewards;
pub mod rng;
pub mod sequences;
pub mod synth;
pub mod textutil;
pub mod train;
pub mod vocab;

pub use catalog::{Catalog, Item};
pub use config::{RunConfig, SplitRatios};
pub use error::Error;
pub use sequences::{CandidateSet, InteractionSequence};
pub use vocab::Vocabulary;

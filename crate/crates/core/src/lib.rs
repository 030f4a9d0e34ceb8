//! Algorithmic core of the CheerBots empathetic dialogue pipeline.
//!
//! Everything here is `no_std` + `alloc`: the Valence-Arousal emotion
//! space, a small reverse-mode differentiation kernel, the emotion
//! controller and response models built on it, the conceptual human
//! model, the empathy-valence reinforcement learning loop and the
//! automatic metrics. File formats, the CLI and the chat service live in
//! the `cheerbots` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chm;
pub mod controller;
pub mod corpus;
pub mod error;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod response;
pub mod rl;
pub mod synthetic;
pub mod text;
pub mod va;

pub use error::{Error, Result};

/// Seeded generator used by every stochastic routine in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
